"""Command-line interface.

Subcommands
-----------
fit              fit one model variant to a dataset and write report tables
predict          fit, then write predictive matrices for named new countries
diagnose-odds    misclassification log-odds spreads of the raw data
simulate         run the simulation study and tabulate the comparison
summarize-draws  rebuild the summary table from a saved draw dump

Every run writes comma-separated tables and a ``manifest.json`` with the
configuration echo, seeds, package versions, the input checksum and the
checksum of every output.  Re-running the configuration recorded in a
manifest reproduces the outputs byte for byte.

Exit status: 0 success, 2 input parse error, 3 invalid configuration,
4 sampler failure, 5 quality gate failed under ``--strict``, 64 usage
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as hio
from .analysis import SUMMARY_COLUMNS, loo_ic, matrix_table, predict_new_country, summarize
from .diagnostics import rhat as _rhat  # noqa: F401  (re-exported for scripting convenience)
from .matrix import odds_table, pool
from .model import Hyperparams, ModelSpec, Variant, free_parameter_count
from .sampler import InitializationError, SamplerConfig, diagnose, sample

log = logging.getLogger("hetmisclass")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_CONFIG = 3
EXIT_SAMPLER = 4
EXIT_STRICT = 5
EXIT_USAGE = 64

OUTPUT_ENV = "HETMISCLASS_OUTPUT_DIR"
DEFAULT_OUTPUT = "hetmisclass-output"
REPORTS = ("summary", "matrices", "comparison", "diagnostics", "odds", "predict", "draws")
DEFAULT_REPORTS = ("summary", "matrices", "comparison", "diagnostics", "odds")
STRICT_MAX_RHAT = 1.01
STRICT_MAX_DIVERGENCE = 0.01
# Log-odds spreads above this value are reported as inconsistent with the
# base model.  One unit on the log scale is a factor of e in the odds.
DEFAULT_ODDS_THRESHOLD = 1.0


class ConfigError(ValueError):
    """Invalid run configuration."""


class UsageError(Exception):
    """Bad command line."""


# --------------------------------------------------------------------- config

@dataclass
class SimulateSettings:
    scenario: str = "all"
    profile: str = "desk"
    replications: int | None = None
    n_causes: int = 5
    n_countries: int = 6
    n_per_country: int = 50
    oos: str = "holdout"
    n_holdout: int = 1
    effect_source: str = "fixed"
    truth_seed: int | None = None
    warmup: int | None = None
    draws: int | None = None
    target_accept: float | None = None
    n_jobs: int = 1


@dataclass
class RunConfig:
    """Everything a run depends on; loadable from and echoed to JSON."""

    model: str = "fully-het"
    input: str | None = None
    output: str | None = None
    hyper: dict = field(default_factory=lambda: Hyperparams().to_dict())
    sampler: dict = field(default_factory=lambda: SamplerConfig().to_dict())
    reports: list = field(default_factory=lambda: list(DEFAULT_REPORTS))
    predict: list = field(default_factory=list)
    level: float = 0.95
    strict: bool = False
    odds_threshold: float = DEFAULT_ODDS_THRESHOLD
    draws_unconstrained: bool = False
    simulate: dict = field(default_factory=lambda: asdict(SimulateSettings()))

    def hyperparams(self) -> Hyperparams:
        return _build(Hyperparams, self.hyper, "hyper")

    def sampler_config(self) -> SamplerConfig:
        return _build(SamplerConfig, self.sampler, "sampler")

    def simulate_settings(self) -> SimulateSettings:
        return _build(SimulateSettings, self.simulate, "simulate")

    def validate(self) -> "RunConfig":
        try:
            Variant.parse(self.model)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.hyperparams()
        self.sampler_config()
        s = self.simulate_settings()
        bad = [r for r in self.reports if r not in REPORTS]
        if bad:
            raise ConfigError(f"unknown report(s) {bad}; choose from {list(REPORTS)}")
        if not 0 < float(self.level) < 1:
            raise ConfigError("level must lie in (0, 1)")
        if not float(self.odds_threshold) > 0:
            raise ConfigError("odds_threshold must be positive")
        if s.profile not in ("desk", "full"):
            raise ConfigError("simulate.profile must be 'desk' or 'full'")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _build(cls, values, section):
    if not isinstance(values, dict):
        raise ConfigError(f"{section} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def load_config(path) -> RunConfig:
    """Read a JSON run configuration; unknown keys are an error."""
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for key, value in raw.items():
        if key in ("hyper", "sampler", "simulate"):
            merged = dict(getattr(cfg, key))
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be a JSON object")
            merged.update(value)
            value = merged
        setattr(cfg, key, value)
    return cfg


# -------------------------------------------------------------------- parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, sampler=True):
    p.add_argument("--config", help="JSON run configuration; flags override its fields")
    p.add_argument("--output", "-o", help=f"output directory (default: config, then ${OUTPUT_ENV}, "
                                          f"then ./{DEFAULT_OUTPUT})")
    p.add_argument("--quiet", "-q", action="store_true")
    p.add_argument("--verbose", "-v", action="store_true")
    if sampler:
        p.add_argument("--seed", type=int)
        p.add_argument("--chains", type=int)
        p.add_argument("--warmup", type=int)
        p.add_argument("--draws", type=int)
        p.add_argument("--target-accept", type=float)
        p.add_argument("--max-depth", type=int)
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--strict", action="store_true", default=None,
                       help=f"exit {EXIT_STRICT} if R-hat > {STRICT_MAX_RHAT} or "
                            f"divergences > {STRICT_MAX_DIVERGENCE:.0%}")


def _fit_args(p):
    p.add_argument("--input", "-i")
    p.add_argument("--model", "-m", help="base, homogeneous, partly-het or fully-het")
    p.add_argument("--level", type=float, help="credible level of reported intervals")
    p.add_argument("--reports", help=f"comma-separated subset of {','.join(REPORTS)}")
    p.add_argument("--save-draws", action="store_true", help="also write the full draw dump")
    p.add_argument("--draws-unconstrained", action="store_true", default=None,
                   help="include raw unconstrained coordinates in the draw dump")
    p.add_argument("--odds-threshold", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetmisclass", description="Bayesian misclassification matrices with "
                                                     "country-level heterogeneity.")
    parser.add_argument("--version", action="version", version=f"hetmisclass {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("fit", help="fit a model variant")
    _common(p)
    _fit_args(p)

    p = sub.add_parser("predict", help="fit, then predict matrices for new countries")
    _common(p)
    _fit_args(p)
    p.add_argument("--country", "-c", action="append", help="new country name (repeatable)")

    p = sub.add_parser("diagnose-odds", help="log-odds consistency check on raw counts")
    _common(p, sampler=False)
    p.add_argument("--input", "-i")
    p.add_argument("--threshold", type=float)
    p.add_argument("--strict", action="store_true", default=None,
                   help=f"exit {EXIT_STRICT} if any spread exceeds the threshold")

    p = sub.add_parser("simulate", help="run the simulation study")
    _common(p)
    p.add_argument("--scenario", help="homogeneous, partly-het, fully-het or all")
    p.add_argument("--reps", type=int)
    p.add_argument("--profile", choices=("desk", "full"))
    p.add_argument("--n-causes", type=int)
    p.add_argument("--n-countries", type=int)
    p.add_argument("--n-per-country", type=int)
    p.add_argument("--oos", choices=("holdout", "loco", "none"))
    p.add_argument("--effect-source", choices=("fixed", "prior"))
    p.add_argument("--truth-seed", type=int)

    p = sub.add_parser("summarize-draws", help="summary table from a saved draw dump")
    _common(p, sampler=False)
    p.add_argument("draws_file", help="draws.csv written by fit --save-draws")
    return parser


def _merge_flags(cfg: RunConfig, args) -> RunConfig:
    g = lambda name: getattr(args, name, None)  # noqa: E731
    for name in ("input", "model", "level", "odds_threshold", "output"):
        if g(name) is not None:
            setattr(cfg, name, g(name))
    if g("threshold") is not None:
        cfg.odds_threshold = args.threshold
    if g("strict"):
        cfg.strict = True
    if g("draws_unconstrained"):
        cfg.draws_unconstrained = True
    if g("reports") is not None:
        cfg.reports = [r.strip() for r in args.reports.split(",") if r.strip()]
    if g("save_draws") and "draws" not in cfg.reports:
        cfg.reports = list(cfg.reports) + ["draws"]
    if g("country"):
        cfg.predict = list(args.country)
    sm = dict(cfg.sampler)
    for flag, key in (("seed", "seed"), ("chains", "chains"), ("warmup", "warmup"), ("draws", "draws"),
                      ("target_accept", "target_accept"), ("max_depth", "max_depth"), ("jobs", "n_jobs")):
        if g(flag) is not None:
            sm[key] = g(flag)
    cfg.sampler = sm
    if args.command == "simulate":
        si = dict(cfg.simulate)
        for flag, key in (("scenario", "scenario"), ("reps", "replications"), ("profile", "profile"),
                          ("n_causes", "n_causes"), ("n_countries", "n_countries"),
                          ("n_per_country", "n_per_country"), ("oos", "oos"),
                          ("effect_source", "effect_source"), ("truth_seed", "truth_seed"),
                          ("warmup", "warmup"), ("draws", "draws"), ("target_accept", "target_accept"),
                          ("jobs", "n_jobs")):
            if g(flag) is not None:
                si[key] = g(flag)
        cfg.simulate = si
    return cfg


def _output_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


# ------------------------------------------------------------------- manifest

def _versions() -> dict:
    import numba
    import scipy
    return {"hetmisclass": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_manifest(out: Path, command: str, cfg: RunConfig, outputs: dict, extra: dict) -> None:
    manifest = {"command": command, "versions": _versions(), "config": cfg.to_dict(),
                "outputs": dict(sorted(outputs.items()))}
    manifest.update(extra)
    hio.write_json(out / "manifest.json", _jsonable(manifest))


def _input_record(path) -> dict:
    return {"path": str(path), "sha256": hio.sha256_file(path)}


# ---------------------------------------------------------------------- fit

def _load_spec(cfg: RunConfig) -> ModelSpec:
    if not cfg.input:
        raise ConfigError("an --input dataset is required")
    if not Path(cfg.input).is_file():
        raise ConfigError(f"input file {cfg.input} does not exist")
    data = hio.ingest(cfg.input)
    try:
        return ModelSpec(Variant.parse(cfg.model), data.counts, cfg.hyperparams(), data.countries)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def summary_rows(scalars: dict, n_chains_warn: bool = False) -> list[tuple]:
    """Rows of the summary table for ``name -> (chains, draws)`` arrays."""
    table = summarize(scalars)
    diag = diagnose(scalars, warn=n_chains_warn)
    return [(name, *vals.tolist(), diag.rhat[name], diag.ess_bulk[name]) for name, vals in table.rows()]


SUMMARY_HEADER = ("name",) + SUMMARY_COLUMNS + ("rhat", "ess_bulk")


def _odds_rows(spec: ModelSpec, threshold: float):
    long_rows, spread_rows = [], []
    scopes = [("pooled", pool(spec.data))] + list(zip(spec.countries, spec.data))
    for scope, counts in scopes:
        tab = odds_table(counts)
        for j, k, i, val in tab.rows():
            long_rows.append((scope, j, k, i, val))
        spread = tab.spread
        labels = spec.causes.labels
        for p, (j, k) in enumerate(tab.pairs):
            n_avail = int((~tab.missing[p]).sum())
            s = float(spread[p])
            spread_rows.append((scope, labels[j], labels[k], n_avail, s if n_avail else None,
                                bool(n_avail >= 2 and s > threshold)))
    return long_rows, spread_rows


ODDS_HEADER = ("scope", "predicted_j", "predicted_k", "gold_cause", "log_odds")
SPREAD_HEADER = ("scope", "predicted_j", "predicted_k", "n_available", "spread", "exceeds")


def _write_odds(out: Path, spec: ModelSpec, threshold: float, outputs: dict):
    long_rows, spread_rows = _odds_rows(spec, threshold)
    outputs["odds.csv"] = hio.write_table(out / "odds.csv", ODDS_HEADER, long_rows)
    outputs["odds_spread.csv"] = hio.write_table(out / "odds_spread.csv", SPREAD_HEADER, spread_rows)
    return spread_rows


def _fit(cfg: RunConfig, command: str) -> int:
    spec = _load_spec(cfg)
    scfg = cfg.sampler_config()
    out = _output_dir(cfg)
    if command == "predict":
        if not cfg.predict:
            raise ConfigError("predict needs at least one --country")
        if spec.variant is Variant.BASE:
            raise ConfigError("the base model has no country layer to predict from")
        if "predict" not in cfg.reports:
            cfg.reports = list(cfg.reports) + ["predict"]
    log.info("fitting %s: %d countries, %d causes, %d chains x %d draws", spec.variant.value,
             spec.n_countries, spec.n_causes, scfg.chains, scfg.draws)
    try:
        draws, diag = sample(spec, scfg, warn=False)
    except InitializationError as exc:
        log.error("sampler failed: %s", exc)
        return EXIT_SAMPLER
    except FloatingPointError as exc:
        log.error("sampler failed: %s", exc)
        return EXIT_SAMPLER
    if not np.all(np.isfinite(draws.unconstrained)):
        log.error("sampler produced non-finite draws")
        return EXIT_SAMPLER
    for msg in diag.warnings:
        log.warning("%s", msg)

    outputs: dict[str, str] = {}
    reports = set(cfg.reports)
    scalars = draws.scalars()
    if "summary" in reports:
        outputs["summary.csv"] = hio.write_table(out / "summary.csv", SUMMARY_HEADER, summary_rows(scalars))
    if "matrices" in reports:
        rows = matrix_table(spec, draws.flat_params(), float(cfg.level))
        outputs["matrices.csv"] = hio.write_table(
            out / "matrices.csv", ("country", "gold_cause", "predicted_cause", "mean", "lower", "upper"), rows)
    cm = None
    if "comparison" in reports:
        cm = loo_ic(draws.flat_loglik())
        outputs["comparison.csv"] = hio.write_table(
            out / "comparison.csv",
            ("model", "waic", "se_waic", "p_waic", "lppd", "loo_ic", "se_loo", "p_loo", "max_pareto_k",
             "n_high_k", "n_rows"),
            [(spec.variant.value, cm.waic, cm.se_waic, cm.p_waic, cm.lppd, cm.loo_ic, cm.se_loo, cm.p_loo,
              float(np.max(cm.pareto_k)), cm.n_high_k, len(cm.pareto_k))])
        if cm.flagged:
            log.warning("%d observation rows have Pareto k > 0.7; LOO-IC may be unreliable", cm.n_high_k)
    if "diagnostics" in reports:
        outputs["diagnostics.csv"] = hio.write_table(out / "diagnostics.csv", DIAG_HEADER, _diag_rows(draws, diag))
    if "odds" in reports:
        _write_odds(out, spec, float(cfg.odds_threshold), outputs)
    if "predict" in reports and cfg.predict:
        pred = predict_new_country(draws, countries=cfg.predict, seed=_predict_seed(scfg.seed))
        table = summarize(pred)
        outputs["predict.csv"] = hio.write_table(
            out / "predict.csv", ("name",) + SUMMARY_COLUMNS, [(n, *v.tolist()) for n, v in table.rows()])
    if "draws" in reports:
        outputs["draws.csv"] = _write_draws(out / "draws.csv", draws, scalars, cfg.draws_unconstrained)

    gate = _strict_gate(diag)
    extra = {
        "input": _input_record(cfg.input),
        "seeds": {"sampler": int(scfg.seed), "predict": _predict_seed(scfg.seed) if cfg.predict else None},
        "model": {"variant": spec.variant.value, "causes": list(spec.causes.labels),
                  "countries": list(spec.countries), "n_free_parameters": free_parameter_count(spec),
                  "omega_max": spec.hyper.omega_max},
        "diagnostics": {"max_rhat": diag.max_rhat, "min_ess_bulk": diag.min_ess,
                        "divergences": diag.divergences, "divergence_fraction": diag.divergence_fraction,
                        "warnings": list(diag.warnings), "strict_gate_passed": gate is None},
    }
    _write_manifest(out, command, cfg, outputs, extra)
    log.info("wrote %d tables to %s", len(outputs), out)
    if cfg.strict and gate is not None:
        log.error("strict gate failed: %s", gate)
        return EXIT_STRICT
    return EXIT_OK


def _predict_seed(seed: int) -> int:
    return int(np.random.SeedSequence([int(seed), 9]).generate_state(1, np.uint64)[0])


def _strict_gate(diag) -> str | None:
    problems = []
    if np.isfinite(diag.max_rhat) and diag.max_rhat > STRICT_MAX_RHAT:
        problems.append(f"max R-hat {diag.max_rhat:.4f} > {STRICT_MAX_RHAT}")
    if diag.divergence_fraction > STRICT_MAX_DIVERGENCE:
        problems.append(f"divergences {diag.divergence_fraction:.2%} > {STRICT_MAX_DIVERGENCE:.0%}")
    return "; ".join(problems) or None


DIAG_HEADER = ("chain", "draws", "divergences", "warmup_divergences", "accept_stat_mean", "step_size",
               "mean_tree_depth", "max_tree_depth_hits", "max_rhat", "min_ess_bulk")


def _diag_rows(draws, diag):
    st = draws.stats
    rows = []
    max_depth = draws.config.max_depth
    for c in range(draws.n_chains):
        rows.append((str(c), draws.n_draws, int(draws.divergent[c].sum()), int(st["warmup_divergences"][c]),
                     float(st["accept_stat"][c].mean()), float(draws.step_size[c]),
                     float(st["tree_depth"][c].mean()), int(np.sum(st["tree_depth"][c] >= max_depth)),
                     None, None))
    rows.append(("all", draws.n_chains * draws.n_draws, diag.divergences, int(st["warmup_divergences"].sum()),
                 diag.accept_stat_mean, None, float(st["tree_depth"].mean()),
                 int(np.sum(st["tree_depth"] >= max_depth)), diag.max_rhat, diag.min_ess))
    return rows


def _write_draws(path: Path, draws, scalars: dict, unconstrained: bool) -> str:
    names = list(scalars)
    cols = [np.asarray(scalars[n], dtype=float) for n in names]
    header = ["chain", "draw"] + names
    u_names = []
    if unconstrained:
        u_names = [f"u[{n}]" for n in draws.spec.layout.coordinate_names()]
        header += u_names

    def rows():
        for c in range(draws.n_chains):
            for t in range(draws.n_draws):
                row = [c, t] + [col[c, t] for col in cols]
                if unconstrained:
                    row += list(draws.unconstrained[c, t])
                yield row
    return hio.write_table(path, header, rows())


# ----------------------------------------------------------- summarize-draws

def read_draws(path) -> dict[str, np.ndarray]:
    """Named scalars ``(chains, draws)`` from a draw dump (raw ``u[...]`` columns skipped)."""
    header, rows = hio.read_table(path)
    if header[:2] != ["chain", "draw"]:
        raise hio.DataParseError(f"{path}: a draw dump starts with the columns chain,draw")
    if not rows:
        raise hio.DataParseError(f"{path}: no draws")
    try:
        arr = np.array([[float(x) for x in r] for r in rows])
    except ValueError as exc:
        raise hio.DataParseError(f"{path}: {exc}") from None
    chains = arr[:, 0].astype(int)
    n_chains = chains.max() + 1
    counts = np.bincount(chains, minlength=n_chains)
    if np.any(counts != counts[0]):
        raise hio.DataParseError(f"{path}: chains have unequal draw counts")
    out = {}
    for k, name in enumerate(header[2:], start=2):
        if name.startswith("u["):
            continue
        out[name] = np.stack([arr[chains == c, k] for c in range(n_chains)])
    return out


def _summarize_draws(cfg: RunConfig, path: str) -> int:
    if not Path(path).is_file():
        raise ConfigError(f"draw dump {path} does not exist")
    scalars = read_draws(path)
    out = _output_dir(cfg)
    outputs = {"summary.csv": hio.write_table(out / "summary.csv", SUMMARY_HEADER, summary_rows(scalars))}
    _write_manifest(out, "summarize-draws", cfg, outputs, {"input": _input_record(path)})
    return EXIT_OK


# ------------------------------------------------------------- diagnose-odds

def _diagnose_odds(cfg: RunConfig) -> int:
    if not cfg.input:
        raise ConfigError("an --input dataset is required")
    if not Path(cfg.input).is_file():
        raise ConfigError(f"input file {cfg.input} does not exist")
    data = hio.ingest(cfg.input)
    spec = ModelSpec(Variant.BASE, data.counts, Hyperparams(), data.countries)
    out = _output_dir(cfg)
    outputs: dict[str, str] = {}
    thr = float(cfg.odds_threshold)
    spread_rows = _write_odds(out, spec, thr, outputs)
    pooled = [r for r in spread_rows if r[0] == "pooled" and r[4] is not None]
    max_spread = max((r[4] for r in pooled), default=float("nan"))
    n_exceed = sum(r[5] for r in spread_rows)
    _write_manifest(out, "diagnose-odds", cfg, outputs,
                    {"input": _input_record(cfg.input), "odds": {"threshold": thr, "max_pooled_spread": max_spread,
                                                                 "n_exceeding": int(n_exceed)}})
    print(f"max pooled log-odds spread {max_spread:.4g}; {n_exceed} pair(s) above threshold {thr:g}")
    if cfg.strict and n_exceed:
        return EXIT_STRICT
    return EXIT_OK


# ------------------------------------------------------------------ simulate

def _simulate(cfg: RunConfig) -> int:
    from .simulation import METRIC_NAMES, SCENARIOS, ScenarioConfig, run_study

    s = cfg.simulate_settings()
    if s.scenario == "all":
        truths = list(SCENARIOS)
    else:
        try:
            truths = [Variant.parse(x) for x in s.scenario.split(",")]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    sampler_base = cfg.sampler_config()
    out = _output_dir(cfg)
    rows, agg, comp, checks, configs = [], [], [], [], []
    seed = int(sampler_base.seed)
    for truth in truths:
        kw = {"n_causes": s.n_causes, "n_countries": s.n_countries, "n_per_country": s.n_per_country,
              "oos": s.oos, "n_holdout": s.n_holdout, "effect_source": s.effect_source, "seed": seed,
              "hyper": cfg.hyperparams(), "n_jobs": s.n_jobs}
        if s.replications is not None:
            kw["replications"] = s.replications
        if s.truth_seed is not None:
            kw["truth_seed"] = s.truth_seed
        try:
            profile = ScenarioConfig.desk if s.profile == "desk" else ScenarioConfig.full
            sc = profile(truth, **kw)
            over = {k: v for k, v in (("warmup", s.warmup), ("draws", s.draws),
                                      ("target_accept", s.target_accept)) if v is not None}
            over.update(max_depth=sampler_base.max_depth, init_radius=sampler_base.init_radius)
            sc = replace(sc, sampler=replace(sc.sampler, **over))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        log.info("scenario %s: %d replications", truth.value, sc.replications)
        res = run_study(sc, progress=lambda r, _rows: log.info("  replication %d done", r + 1))
        rows += res.rows
        agg += res.aggregate()
        comp += res.comparisons()
        for c in res.checks():
            checks.append({"scenario": truth.value, **c})
            print(f"[{'PASS' if c['passed'] else 'FAIL'}] {truth.value}: {c['check']} ({c['detail']})")
        configs.append(sc.to_dict())
        for f in res.failures:
            log.warning("replication %d %s failed: %s", f["replication"], f["method"], f["message"])

    id_cols = ["scenario", "replication", "method", "data_seed", "sampler_seed", "failed", "flagged", "message"]
    outputs = {
        "replications.csv": hio.write_table(out / "replications.csv", id_cols + list(METRIC_NAMES),
                                            [[r[k] for k in id_cols + list(METRIC_NAMES)] for r in rows]),
        "aggregate.csv": hio.write_table(out / "aggregate.csv", ("scenario", "method", "metric", "n", "mean", "mcse"),
                                         [[a[k] for k in ("scenario", "method", "metric", "n", "mean", "mcse")]
                                          for a in agg]),
        "comparisons.csv": hio.write_table(
            out / "comparisons.csv",
            ("scenario", "metric", "method_a", "method_b", "n", "mean_diff", "mcse", "a_wins", "b_wins"),
            [[c[k] for k in ("scenario", "metric", "method_a", "method_b", "n", "mean_diff", "mcse", "a_wins",
                             "b_wins")] for c in comp]),
        "checks.csv": hio.write_table(out / "checks.csv", ("scenario", "check", "passed", "detail"),
                                      [[c[k] for k in ("scenario", "check", "passed", "detail")] for c in checks]),
    }
    _write_manifest(out, "simulate", cfg, outputs, {"scenarios": configs, "seeds": {"master": seed}})
    n_failed = sum(r["failed"] for r in rows)
    if n_failed == len(rows):
        log.error("every fit failed")
        return EXIT_SAMPLER
    return EXIT_OK


# ---------------------------------------------------------------------- main

def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:          # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = _merge_flags(cfg, args).validate()
        if args.command in ("fit", "predict"):
            return _fit(cfg, args.command)
        if args.command == "diagnose-odds":
            return _diagnose_odds(cfg)
        if args.command == "simulate":
            return _simulate(cfg)
        if args.command == "summarize-draws":
            return _summarize_draws(cfg, args.draws_file)
    except hio.DataParseError as exc:
        log.error("%s", exc)
        return EXIT_PARSE
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return EXIT_CONFIG
    except InitializationError as exc:
        log.error("sampler failed: %s", exc)
        return EXIT_SAMPLER
    return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
