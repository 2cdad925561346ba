from .base import (
    ChoiceResult,
    Oracle,
    Prompt,
    cache_key,
    fan_out,
    infer_persona_text,
    oracle_key,
    parse_choice_response,
    simulate_choice,
    simulate_choice_detail,
)
from .cache import CachedOracle, cached
from .http import DEFAULT_API_KEY_ENV, HttpChatOracle, OracleConfig
from .synthetic import (
    SyntheticChoiceOracle,
    SyntheticExpert,
    SyntheticOracleParams,
    choice_features,
    utilities,
)

__all__ = [
    "CachedOracle",
    "ChoiceResult",
    "DEFAULT_API_KEY_ENV",
    "HttpChatOracle",
    "Oracle",
    "OracleConfig",
    "Prompt",
    "SyntheticChoiceOracle",
    "SyntheticExpert",
    "SyntheticOracleParams",
    "cache_key",
    "cached",
    "choice_features",
    "fan_out",
    "infer_persona_text",
    "oracle_key",
    "parse_choice_response",
    "simulate_choice",
    "simulate_choice_detail",
    "utilities",
]
