"""Prompt type, oracle protocol, response parsing and bounded fan-out."""

from __future__ import annotations

import hashlib
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Protocol, Sequence, TypeVar

from ..data import Alternative, ChoiceContext, RespondentPanel, SocioDemographics
from ..errors import OracleError, ResponseFormatError
from ..records import dumps

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class Prompt:
    """A two-part chat prompt.

    ``payload`` carries the structured inputs the text was rendered from.  Text
    oracles ignore it; the synthetic oracles read it instead of parsing prose.
    It takes no part in equality or cache keys.
    """

    system_text: str
    user_text: str
    metadata: dict = field(default_factory=dict, compare=False)
    payload: Any = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.system_text.strip() or not self.user_text.strip():
            raise ValueError("prompt texts must be non-empty")

    def with_suffix(self, suffix: str) -> "Prompt":
        return Prompt(self.system_text, self.user_text + suffix, dict(self.metadata), self.payload)


@dataclass(frozen=True)
class ChoicePayload:
    demographics: SocioDemographics
    context: ChoiceContext
    ratings: tuple[int, ...] | None = None


@dataclass(frozen=True)
class PanelPayload:
    panel: RespondentPanel


class Oracle(Protocol):
    identity: dict
    deterministic: bool

    def complete(self, prompt: Prompt) -> str: ...


def cache_key(model_name: str, temperature: float, prompt: Prompt) -> str:
    blob = dumps([model_name, float(temperature), prompt.system_text, prompt.user_text])
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def oracle_key(oracle: Oracle, prompt: Prompt) -> str:
    ident = oracle.identity
    return cache_key(ident.get("model_name", "?"), ident.get("temperature", 0.0), prompt)


# --- response parsing ------------------------------------------------------

_FINAL = re.compile(r"^\W*final\s+answer\s*[:\-]\s*(.+)$", re.IGNORECASE | re.MULTILINE)
_MODE_PATTERNS = {
    Alternative.TRAIN: re.compile(r"\btrains?\b", re.IGNORECASE),
    Alternative.SWISSMETRO: re.compile(r"\bswiss\s*-?\s*metro\b|\bmetro\b|\bsm\b", re.IGNORECASE),
    Alternative.CAR: re.compile(r"\bcars?\b|\bdriv(?:e|es|ing)\b", re.IGNORECASE),
}


def _modes_in(text: str) -> set[Alternative]:
    return {alt for alt, pat in _MODE_PATTERNS.items() if pat.search(text)}


def parse_choice_response(text: str) -> Alternative:
    """Extract exactly one travel mode from a free-text answer.

    The last "Final answer:" line wins when present; otherwise the whole text
    is scanned.  Zero or several distinct modes is a format error.
    """
    if not text or not text.strip():
        raise ResponseFormatError("empty response", text or "")
    finals = _FINAL.findall(text)
    scope = finals[-1] if finals else text
    modes = _modes_in(scope)
    if len(modes) != 1:
        what = "no" if not modes else "ambiguous (" + ", ".join(m.label for m in sorted(modes)) + ")"
        raise ResponseFormatError(f"{what} travel mode in response", text)
    return modes.pop()


@dataclass(frozen=True)
class ChoiceResult:
    alternative: Alternative
    text: str
    key: str


CORRECTIVE_CHOICE_SUFFIX = (
    "\n\nYour previous answer could not be read. Reply with exactly one line: "
    "'Final answer: Train', 'Final answer: Swissmetro' or 'Final answer: Car'."
)


def simulate_choice_detail(oracle: Oracle, prompt: Prompt, format_retries: int = 1) -> ChoiceResult:
    attempt_prompt = prompt
    for attempt in range(format_retries + 1):
        text = oracle.complete(attempt_prompt)
        try:
            return ChoiceResult(parse_choice_response(text), text, oracle_key(oracle, attempt_prompt))
        except ResponseFormatError:
            if attempt == format_retries:
                log.warning("unparseable choice response for %s: %r", prompt.metadata, text[:200])
                raise
            attempt_prompt = prompt.with_suffix(CORRECTIVE_CHOICE_SUFFIX)
    raise AssertionError("unreachable")


def simulate_choice(oracle: Oracle, prompt: Prompt, format_retries: int = 1) -> Alternative:
    return simulate_choice_detail(oracle, prompt, format_retries).alternative


def infer_persona_text(expert: Oracle, prompt: Prompt) -> str:
    return expert.complete(prompt)


# --- fan-out ---------------------------------------------------------------


def fan_out(fn: Callable[[T], R], items: Sequence[T] | Iterable[T], max_workers: int = 1) -> list[R | OracleError]:
    """Apply ``fn`` to every item, returning results in input order.

    Oracle errors are returned in place of the result so that callers can
    record the failure and carry on; any other exception propagates.
    """
    items = list(items)

    def guarded(item):
        try:
            return fn(item)
        except OracleError as exc:
            return exc

    if max_workers <= 1 or len(items) <= 1:
        return [guarded(it) for it in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(guarded, items))
