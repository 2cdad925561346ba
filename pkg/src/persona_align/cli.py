"""Command-line entry point: ``persona-align <stage> [options]``.

Each stage writes into ``<output-dir>/<stage>/`` together with a
``manifest.json`` recording the resolved configuration, input checksums,
seeds, prompt versions, oracle identity and call counts.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import baselines as bl
from .config import RunManifest, resolve_config
from .data import (
    RespondentPanel,
    filter_records,
    load_bundle,
    parse_swissmetro,
    render_summary,
    save_bundle,
    split_datasets,
    summarize_dataset,
)
from .em import TrainConfig, config_dict, train
from .errors import ConfigError, DataError, EstimationError, OracleError, PersonaAlignError
from .evaluation import comparison_report, evaluate, write_report
from .interpret import cluster_profiles, export_params, k_sweep, profile_table
from .loading import loading_distribution, load_params, save_params
from .oracle import CachedOracle, HttpChatOracle, OracleConfig, SyntheticChoiceOracle, SyntheticExpert, SyntheticOracleParams
from .personas import infer_personas, load_basis, save_basis
from .predictor import PredictionConfig, load_predictions, predict, save_predictions
from .records import read_jsonl, write_json, write_jsonl

log = logging.getLogger("persona_align")

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_ORACLE = 5
EXIT_ESTIMATION = 6


class Stage:
    """Per-command context: resolved config, output directory, oracle and manifest."""

    def __init__(self, ctx: click.Context, command: str, flags: dict | None = None):
        g = dict(ctx.obj or {})
        if ctx.params.get("seed") is not None:
            g["seed"] = ctx.params["seed"]
        top = {"seed": g.get("seed"), "output_dir": g.get("output_dir"), "log_level": g.get("log_level"),
               "oracle": {"kind": g.get("oracle"), "cache": g.get("cache"), "api_key_env": g.get("api_key_env"),
                          "max_parallel_requests": g.get("max_workers")}}  # fmt: skip
        merged = _deep_update(top, flags or {})
        self.config = resolve_config(g.get("config"), merged)
        logging.basicConfig(level=getattr(logging, self.config["log_level"].upper(), logging.INFO),
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)  # fmt: skip
        if g.get("api_key_env") and self.config["oracle"]["kind"] != "http":
            raise ConfigError("--api-key-env only applies with --oracle http")
        self.command = command
        self.out = Path(self.config["output_dir"]) / command
        self.out.mkdir(parents=True, exist_ok=True)
        self.seed = int(self.config["seed"])
        self.manifest = RunManifest(command, self.config, seeds={"seed": self.seed})
        self._oracles: list = []

    @property
    def workers(self) -> int:
        return int(self.config["oracle"]["max_parallel_requests"])

    def oracle(self, role: str = "choice"):
        oc = self.config["oracle"]
        if oc["kind"] == "synthetic":
            params = SyntheticOracleParams(noise_scale=oc["synthetic_noise"], seed=self.seed)
            inner = SyntheticChoiceOracle(params) if role == "choice" else SyntheticExpert(params)
        elif oc["kind"] == "http":
            inner = HttpChatOracle(OracleConfig(
                endpoint_url=oc["endpoint_url"], model_name=oc["model_name"], temperature=oc["temperature"],
                max_retries=oc["max_retries"], request_timeout=oc["request_timeout"],
                max_parallel_requests=oc["max_parallel_requests"], api_key_env=oc["api_key_env"]))  # fmt: skip
        else:
            raise ConfigError(f"oracle.kind must be 'synthetic' or 'http', got {oc['kind']!r}")
        oracle = CachedOracle(inner, oc["cache"]) if oc["cache"] else inner
        self._oracles.append(oracle)
        self.manifest.oracle = oracle.identity
        return oracle

    def output(self, name: str, path) -> Path:
        self.manifest.outputs[name] = str(path)
        return Path(path)

    def finish(self, **extra) -> Path:
        for o in self._oracles:
            inner = getattr(o, "inner", o)
            self.manifest.oracle_calls += int(getattr(inner, "calls", getattr(inner, "request_count", 0)))
            self.manifest.cache_hits += int(getattr(o, "hits", 0))
            self.manifest.cache_misses += int(getattr(o, "misses", 0))
        self.manifest.extra.update(extra)
        return self.manifest.write(self.out)


def _deep_update(base: dict, new: dict) -> dict:
    out = dict(base)
    for k, v in new.items():
        out[k] = _deep_update(out.get(k) or {}, v) if isinstance(v, dict) else v
    return out


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"missing required option {flag}")
    return value


def _load_panels(path) -> list[RespondentPanel]:
    p = Path(path)
    if p.suffix == ".jsonl":
        _, recs = read_jsonl(p, "respondent_panel")
        return [RespondentPanel.from_dict(r) for r in recs]
    return filter_records(parse_swissmetro(p))


def seed_option(f):
    return click.option("--seed", type=int, help="Overrides the global --seed for this stage.")(f)


# --- group -----------------------------------------------------------------


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config", type=click.Path(dir_okay=False), help="YAML config file.")
@click.option("--seed", type=int, help="Master seed (default 42).")
@click.option("--output-dir", type=click.Path(file_okay=False), help="Run root; each stage writes a subdirectory.")
@click.option("--oracle", type=click.Choice(["http", "synthetic"]), help="Choice/expert oracle backend.")
@click.option("--cache", type=click.Path(dir_okay=False), help="Append-only response cache file.")
@click.option("--api-key-env", help="Name of the environment variable holding the API key (http oracle).")
@click.option("--max-workers", type=int, help="Concurrent oracle requests.")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.version_option(package_name="persona-align")
@click.pass_context
def cli(ctx, **kwargs):
    """Persona-loading alignment pipeline for travel mode choice."""
    ctx.obj = kwargs


@cli.command()
@seed_option
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), help="Raw Swissmetro data file.")
@click.pass_context
def ingest(ctx, seed, input_path):
    """Parse and filter the raw survey file into respondent panels."""
    st = Stage(ctx, "ingest")
    path = _require(input_path, "--input")
    st.manifest.add_input(path)
    panels = filter_records(parse_swissmetro(path))
    out = st.output("panels", write_jsonl(st.out / "panels.jsonl", "respondent_panel", 1, (p.to_dict() for p in panels)))
    n_rec = sum(len(p.observations) for p in panels)
    st.finish(respondents=len(panels), records=n_rec)
    click.echo(f"{len(panels)} respondents, {n_rec} records -> {out}")


@cli.command()
@seed_option
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False),
              help="Raw Swissmetro file or ingested panels.jsonl.")  # fmt: skip
@click.option("--n-detailed", type=int)
@click.option("--n-general", type=int)
@click.option("--n-test", type=int)
@click.pass_context
def split(ctx, seed, input_path, n_detailed, n_general, n_test):
    """Draw the detailed panels, general records and test records."""
    st = Stage(ctx, "split", {"split": {"n_detailed_respondents": n_detailed, "n_general_records": n_general,
                                        "n_test_records": n_test}})  # fmt: skip
    path = _require(input_path, "--input")
    st.manifest.add_input(path)
    bundle = split_datasets(_load_panels(path), st.seed, st.config["split"])
    for name, p in save_bundle(bundle, st.out).items():
        st.output(name, p)
    st.output("split", write_json(st.out / "split.json", {"seed": st.seed, "sizes": bundle.sizes}))
    summary = summarize_dataset(bundle)
    st.output("summary", write_json(st.out / "summary.json", summary))
    (st.out / "summary.txt").write_text(render_summary(summary) + "\n")
    st.finish()
    click.echo(f"detailed={len(bundle.detailed)} panels ({len(bundle.detailed_records)} records), "
               f"general={len(bundle.general)}, test={len(bundle.test)} -> {st.out}")  # fmt: skip


@cli.command("infer-personas")
@seed_option
@click.option("--bundle", type=click.Path(exists=True, file_okay=False), help="Split output directory.")
@click.option("--date", help="Date string recorded in the basis provenance.")
@click.pass_context
def infer_personas_cmd(ctx, seed, bundle, date):
    """Infer one persona per detailed respondent with the expert oracle."""
    st = Stage(ctx, "personas")
    path = _require(bundle, "--bundle")
    st.manifest.add_input(path)
    b = load_bundle(path)
    basis = infer_personas(b.detailed, st.oracle("expert"), st.workers, date)
    out = st.output("basis", save_basis(basis, st.out / "basis.jsonl"))
    st.finish(n_personas=len(basis), failures=basis.failures)
    click.echo(f"{len(basis)} personas ({len(basis.failures)} failures) -> {out}")


def _train_flags(**kw) -> dict:
    mapping = {"l0": "L0", "max_iterations": "max_iterations", "convergence_tol": "convergence_tol", "alpha_e": "alpha_e",
               "alpha_m": "alpha_m", "lam": "lambda", "learning_rate": "learning_rate",
               "m_step_iterations": "m_step_iterations", "track_exact": "track_exact"}  # fmt: skip
    return {"train": {mapping[k]: v for k, v in kw.items() if k in mapping}}


@cli.command("train")
@seed_option
@click.option("--bundle", type=click.Path(exists=True, file_okay=False))
@click.option("--basis", type=click.Path(exists=True, dir_okay=False))
@click.option("--l0", type=int, help="Initial persona sample size.")
@click.option("--max-iterations", type=int)
@click.option("--convergence-tol", type=float)
@click.option("--alpha-e", type=float)
@click.option("--alpha-m", type=float)
@click.option("--lambda", "lam", type=float)
@click.option("--learning-rate", type=float)
@click.option("--m-step-iterations", type=int)
@click.option("--track-exact/--no-track-exact", default=None, help="Also compute the exact log-likelihood each iteration.")
@click.option("--resume", is_flag=True, help="Continue from the checkpoint in the output directory.")
@click.pass_context
def train_cmd(ctx, seed, bundle, basis, resume, **kw):
    """Fit the persona-loading parameters by stochastic EM."""
    st = Stage(ctx, "train", _train_flags(**kw))
    bpath, kpath = _require(bundle, "--bundle"), _require(basis, "--basis")
    st.manifest.add_input(bpath)
    st.manifest.add_input(kpath)
    t = st.config["train"]
    cfg = TrainConfig(L0=t["L0"], max_iterations=t["max_iterations"], convergence_tol=t["convergence_tol"],
                      alpha_e=t["alpha_e"], alpha_m=t["alpha_m"], lam=t["lambda"], learning_rate=t["learning_rate"],
                      m_step_iterations=t["m_step_iterations"], seed=st.seed, max_workers=st.workers,
                      track_exact=t["track_exact"])  # fmt: skip
    b, k = load_bundle(bpath), load_basis(kpath)
    params, state = train(b, k, st.oracle("choice"), cfg, checkpoint_path=st.out / "checkpoint.json", resume=resume)
    st.output("params", save_params(params, st.out / "params.jsonl"))
    st.output("history", write_jsonl(st.out / "history.jsonl", "train_history", 1, state.history, config=config_dict(cfg),
                                     initial_exact_ll=state.initial_exact_ll))  # fmt: skip
    st.finish(iterations=state.iteration, final_L=state.L)
    last = state.history[-1]
    click.echo(f"{state.iteration} iterations, L={state.L}, simulated LL={last['simulated_ll']:.4f}, "
               f"|dbeta|={last['delta_inf']:.3g} -> {st.out}")  # fmt: skip


@cli.command("predict")
@seed_option
@click.option("--bundle", type=click.Path(exists=True, file_okay=False))
@click.option("--basis", type=click.Path(exists=True, dir_okay=False))
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--repeats", type=int)
@click.option("--aggregation", type=click.Choice(["single_draw", "majority_vote"]))
@click.pass_context
def predict_cmd(ctx, seed, bundle, basis, params_path, repeats, aggregation):
    """Predict the test records with personas drawn from the learned loading function."""
    st = Stage(ctx, "predict", {"predict": {"repeats": repeats, "aggregation": aggregation}})
    paths = [_require(bundle, "--bundle"), _require(basis, "--basis"), _require(params_path, "--params")]
    for p in paths:
        st.manifest.add_input(p)
    b, k, params = load_bundle(paths[0]), load_basis(paths[1]), load_params(paths[2])
    pc = st.config["predict"]
    cfg = PredictionConfig(pc["repeats"], pc["aggregation"], st.seed, st.workers, st.config["train"]["lambda"])
    ps = predict(b.test, params, k, st.oracle("choice"), cfg)
    st.output("predictions", save_predictions(ps, st.out / "predictions.jsonl"))
    rep = evaluate(ps, b.test)
    (st.out / "summary.txt").write_text(
        f"predictions: {len(ps)}  failed: {ps.n_failed}\n"
        f"predicted shares: {rep.predicted_shares.to_dict()}\ntrue shares: {rep.true_shares.to_dict()}\n"
    )
    st.finish(n_failed=ps.n_failed)
    click.echo(f"{len(ps)} predictions ({ps.n_failed} failed) -> {st.out}")


@cli.command("baseline")
@seed_option
@click.argument("method", type=click.Choice(["mnl", "zero-shot", "few-shot", "same-group"]))
@click.option("--bundle", type=click.Path(exists=True, file_okay=False))
@click.option("--basis", type=click.Path(exists=True, dir_okay=False), help="Persona basis (same-group only).")
@click.option("--n-examples", type=int, help="Few-shot example count.")
@click.option("--sweep", is_flag=True, help="Few-shot: score several example counts on the general records.")
@click.option("--pass-interaction/--no-pass-interaction", default=None, help="MNL: annual-pass cost interaction.")
@click.pass_context
def baseline_cmd(ctx, seed, method, bundle, basis, n_examples, sweep, pass_interaction):
    """Run a comparison model on the test records."""
    if sweep and n_examples is not None:
        raise ConfigError("--sweep and --n-examples are mutually exclusive")
    if (sweep or n_examples is not None) and method != "few-shot":
        raise ConfigError("--sweep/--n-examples only apply to the few-shot baseline")
    st = Stage(ctx, f"baseline-{method}", {"baselines": {"few_shot_examples": n_examples,
                                                         "mnl_pass_interaction": pass_interaction}})  # fmt: skip
    bpath = _require(bundle, "--bundle")
    st.manifest.add_input(bpath)
    b = load_bundle(bpath)
    train_pool = b.detailed_records + list(b.general)
    if method == "mnl":
        params = bl.mnl_fit(train_pool, st.config["baselines"]["mnl_pass_interaction"])
        st.output("params", write_json(st.out / "params.json", params.to_dict()))
        ps = bl.run_mnl(params, b.test)
    elif method == "zero-shot":
        ps = bl.run_zero_shot(b.test, st.oracle("choice"), st.workers)
    elif method == "few-shot":
        oracle = st.oracle("choice")
        if sweep:
            pool = b.detailed_records
            scores = bl.few_shot_sweep(b.general, pool, oracle, max_workers=st.workers)
            st.output("sweep", write_json(st.out / "sweep.json", {str(n): v for n, v in scores.items()}))
            best = max(scores, key=lambda n: (scores[n], -n))
            click.echo("n_examples  macro F1\n" + "\n".join(f"{n:>10}  {v:.4f}" for n, v in scores.items()))
            click.echo(f"best n_examples = {best}")
            n = best
        else:
            n = st.config["baselines"]["few_shot_examples"]
        ps = bl.run_few_shot(b.test, train_pool, oracle, bl.FewShotConfig(n), st.workers)
    else:
        kpath = _require(basis, "--basis")
        st.manifest.add_input(kpath)
        ps = bl.run_same_group(b.test, load_basis(kpath), st.oracle("choice"), st.seed, st.workers)
    st.output("predictions", save_predictions(ps, st.out / "predictions.jsonl"))
    st.finish(n_failed=ps.n_failed)
    click.echo(f"{method}: {len(ps)} predictions ({ps.n_failed} failed) -> {st.out}")


@cli.command("evaluate")
@seed_option
@click.option("--bundle", type=click.Path(exists=True, file_okay=False))
@click.option("--predictions", "pred_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def evaluate_cmd(ctx, seed, bundle, pred_path):
    """Score one prediction set against the test truths."""
    st = Stage(ctx, "evaluate")
    bpath, ppath = _require(bundle, "--bundle"), _require(pred_path, "--predictions")
    st.manifest.add_input(bpath)
    st.manifest.add_input(ppath)
    rep = comparison_report([load_predictions(ppath)], load_bundle(bpath).test)
    for name, p in write_report(rep, st.out).items():
        st.output(name, p)
    st.finish()
    click.echo(rep.table)


@cli.command("compare")
@seed_option
@click.option("--bundle", type=click.Path(exists=True, file_okay=False))
@click.option("--predictions", "pred_paths", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Prediction sets in table order (repeatable).")  # fmt: skip
@click.pass_context
def compare_cmd(ctx, seed, bundle, pred_paths):
    """Comparison table across methods, with plot data."""
    st = Stage(ctx, "compare")
    bpath = _require(bundle, "--bundle")
    if not pred_paths:
        raise ConfigError("compare needs at least one --predictions file")
    st.manifest.add_input(bpath)
    sets = {}
    for p in pred_paths:
        st.manifest.add_input(p)
        ps = load_predictions(p)
        name = ps.method if ps.method not in sets else f"{ps.method}:{Path(p).parent.name}"
        sets[name] = ps
    rep = comparison_report(sets, load_bundle(bpath).test)
    for name, p in write_report(rep, st.out).items():
        st.output(name, p)
    st.finish()
    click.echo(rep.table)


@cli.command("interpret")
@seed_option
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--bundle", type=click.Path(exists=True, file_okay=False), help="Profiles to cluster (default: all 60 combinations).")
@click.option("--k", type=int)
@click.option("--restarts", type=int)
@click.option("--sweep", is_flag=True, help="Also report inertia and silhouette for k = 2..8.")
@click.pass_context
def interpret_cmd(ctx, seed, params_path, bundle, k, restarts, sweep):
    """Export the parameter table and cluster socio-demographic profiles."""
    from itertools import product

    from .data import DEMOGRAPHIC_CATEGORIES, DEMOGRAPHIC_FIELDS, SocioDemographics

    st = Stage(ctx, "interpret", {"interpret": {"k": k, "restarts": restarts}})
    ppath = _require(params_path, "--params")
    st.manifest.add_input(ppath)
    params = load_params(ppath)
    if bundle:
        st.manifest.add_input(bundle)
        b = load_bundle(bundle)
        demos = [r.demographics for r in b.detailed_records + list(b.general) + list(b.test)]
    else:
        sizes = [range(len(DEMOGRAPHIC_CATEGORIES[f])) for f in DEMOGRAPHIC_FIELDS]
        demos = [SocioDemographics.from_codes(c) for c in product(*sizes)]
    table = profile_table(demos, params)
    ic = st.config["interpret"]
    ca = cluster_profiles(table, ic["k"], st.seed, ic["restarts"])
    st.output("params_table", write_json(st.out / "params_table.json", export_params(params)))
    rows = [{"profile": d.to_dict(), "count": c, "embedding": e.tolist(), "cluster": int(lab), "x": float(xy[0]), "y": float(xy[1])}
            for d, c, e, lab, xy in zip(table.profiles, table.counts, table.embeddings, ca.labels, ca.coordinates)]  # fmt: skip
    st.output("clusters", write_json(st.out / "clusters.json", {"k": ca.k, "inertia": ca.inertia,
                                                                 "centroids": ca.centroids.tolist(), "profiles": rows}))  # fmt: skip
    if sweep:
        st.output("k_sweep", write_json(st.out / "k_sweep.json", k_sweep(table, seed=st.seed, restarts=ic["restarts"])))
    st.finish()
    for r in export_params(params):
        click.echo(f"{r['label']:<22} {r['value']: .4f}")
    click.echo(f"{len(table)} profiles in {ca.k} clusters, sizes {ca.sizes()}")


@cli.command("synth")
@seed_option
@click.option("--n-personas", type=int, default=40, show_default=True)
@click.option("--n-general", type=int, default=200, show_default=True)
@click.option("--n-test", type=int, default=400, show_default=True)
@click.pass_context
def synth_cmd(ctx, seed, n_personas, n_general, n_test):
    """Generate a synthetic population whose preference groups follow user group."""
    from .synth import PopulationSpec, generate_population

    st = Stage(ctx, "synth")
    pop = generate_population(PopulationSpec(n_personas=n_personas, n_general=n_general, n_test=n_test, seed=st.seed))
    for name, p in save_bundle(pop.bundle, st.out).items():
        st.output(name, p)
    st.output("split", write_json(st.out / "split.json", {"seed": st.seed, "sizes": pop.bundle.sizes}))
    st.output("basis", save_basis(pop.basis, st.out / "true_basis.jsonl"))
    st.finish()
    click.echo(f"synthetic population: {n_personas} panels, {n_general} general, {n_test} test -> {st.out}")


@cli.command("dump-loading")
@seed_option
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--basis", type=click.Path(exists=True, dir_okay=False))
@click.option("--respondent", type=int, help="Respondent id to look up in the basis or --bundle.")
@click.option("--bundle", type=click.Path(exists=True, file_okay=False), help="Bundle used to resolve --respondent.")
@click.option("--profile", nargs=4, type=int, help="Category codes: gender age income group.")
@click.option("--top", type=int, default=10, show_default=True)
@click.pass_context
def dump_loading(ctx, seed, params_path, basis, respondent, bundle, profile, top):
    """Print the most probable personas for one profile."""
    from .data import SocioDemographics

    ppath, kpath = _require(params_path, "--params"), _require(basis, "--basis")
    if (respondent is None) == (not profile):
        raise ConfigError("give exactly one of --respondent or --profile")
    k = load_basis(kpath)
    if profile:
        d = SocioDemographics.from_codes(profile)
    elif respondent in k.demographics_index:
        d = k.demographics_index[respondent]
    else:
        recs = load_bundle(_require(bundle, "--bundle")) if bundle else None
        found = [r.demographics for r in (recs.detailed_records + recs.general + recs.test if recs else []) if r.respondent_id == respondent]
        if not found:
            raise DataError(f"respondent {respondent} not found")
        d = found[0]
    dist = loading_distribution(d, load_params(ppath), k)
    order = np.argsort(-dist.probabilities, kind="stable")
    click.echo(f"profile: {d.to_dict()}")
    click.echo(f"{'persona':>8} {'probability':>12} {'similarity':>10}")
    for i in order[:top]:
        click.echo(f"{k.personas[i].source_respondent_id:>8} {dist.probabilities[i]:12.6f} {dist.similarities[i]:10.4f}")


# --- entry point -----------------------------------------------------------


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, OracleError):
        return EXIT_ORACLE
    if isinstance(exc, EstimationError):
        return EXIT_ESTIMATION
    if isinstance(exc, ValueError):
        return EXIT_CONFIG
    return 1


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="persona-align", standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except (PersonaAlignError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return exit_code_for(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
