"""Config ingestion, run manifests and tidy CSV outputs.

Files written to a run directory:

``rounds.csv``
    ``round, series, key, value``. One row per scalar of every
    :class:`RoundRecord`: ``train_objective`` (key = minibatch index),
    ``val_objective``, ``val_stderr``, ``lr``, ``seconds``,
    ``rank_deficient`` and ``flow_gap`` (key = flow channel). Rows are
    appended after each round, so an aborted run keeps what it finished.
``metrics.csv``
    ``problem, quantity, metric, value``: the relative L2 table
    (``metric = relative_l2``) and the test objective with its standard
    error, the closed-form value and, for the portfolio game, the reported
    utility (its absolute value).
``trajectories.csv``
    ``path, source, quantity, step, t, value`` for three sampled test
    paths, ``source`` being ``learned`` or ``oracle``.
``manifest.json``
    The resolved config, user overrides, design decisions, seeds, package
    versions, timing and run status.

Every float is written with 17 significant digits.
"""
from __future__ import annotations

import configparser
import csv
import json
import platform
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__, control
from .benchmarks import registry
from .benchmarks.common import GRID_CAP
from .driver import DEFAULTS, ConfigError, RoundRecord, RunConfig, split_seeds

SECTIONS = {
    "run": ("problem", "seed", "outdir", "evaluate"),
    "sde": ("N", "L", "T", "n", "n0"),
    "signature": ("M", "signature_cache"),
    "flow": ("ridge", "stamps", "flow_init_scale", "warm_start_rounds"),
    "training": ("n_rounds", "batch_size", "n_batches", "lr", "lr_factor", "lr_boundaries",
                 "activation", "init", "input_scaling", "shuffle"),
}
PROBLEM_SECTION = "problem"

_INT = ("N", "L", "n", "n0", "n_rounds", "seed")
_OPT_INT = ("M", "batch_size", "n_batches", "warm_start_rounds")
_FLOAT = ("T", "lr", "ridge", "flow_init_scale")
_OPT_FLOAT = ("lr_factor",)
_BOOL = ("shuffle", "evaluate")
_STR = ("problem", "activation", "init", "input_scaling", "outdir")
_OPT_STR = ("signature_cache",)

UTILITY_CONVENTION = ("portfolio utility is reported as the absolute value of the (negative) "
                      "expected exponential utility")


def fmt(x) -> str:
    return format(float(x), ".17g")


# -- config -------------------------------------------------------------------

def _is_none(text: str) -> bool:
    return text.strip().lower() in ("", "none", "null")


def parse_field(key: str, text: str):
    """String value of a :class:`RunConfig` field, as found in INI files and ``--key`` flags."""
    text = str(text).strip()
    try:
        if key in _OPT_INT + _OPT_FLOAT + _OPT_STR or key == "lr_boundaries":
            if _is_none(text):
                return None
        if key in _INT + _OPT_INT:
            return int(text)
        if key in _FLOAT + _OPT_FLOAT:
            return float(text)
        if key in _BOOL:
            low = text.lower()
            if low not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(text)
            return configparser.ConfigParser.BOOLEAN_STATES[low]
        if key in _STR + _OPT_STR:
            return text
        if key == "stamps":
            return tuple(float(v) for v in text.split(","))
        if key == "lr_boundaries":
            return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None
    raise ConfigError(f"unknown config key {key!r}")


def parse_problem_param(problem: str, key: str, text: str):
    allowed = registry.param_names(problem)
    if key not in allowed:
        raise ConfigError(f"unknown {problem} parameter {key!r}; expected one of {', '.join(allowed)}")
    try:
        if problem == "lq":
            return float(text)
        lo, hi = (float(v) for v in str(text).split(","))
        return (lo, hi)
    except ValueError:
        raise ConfigError(f"{key}: expected {'a number' if problem == 'lq' else 'lo, hi'}, got {text!r}") from None


def read_ini(path) -> dict[str, str]:
    """Flat ``{key: raw string}`` from a sectioned INI file; ``problem.<name>`` for benchmark params."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # N and n are different keys
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    flat = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            if section == PROBLEM_SECTION:
                flat[f"problem.{key}"] = value
            elif section in SECTIONS:
                if key not in SECTIONS[section]:
                    home = next((s for s, keys in SECTIONS.items() if key in keys), None)
                    hint = f" (belongs in [{home}])" if home else ""
                    raise ConfigError(f"unknown key {key!r} in [{section}]{hint}")
                flat[key] = value
            else:
                raise ConfigError(f"unknown config section [{section}]")
    return flat


def load_config(path=None, overrides: dict[str, str] | None = None) -> tuple[RunConfig, dict]:
    """Merge an optional INI file with ``overrides`` (flag values win) and validate.

    Returns the *resolved* config and the dict of explicitly set keys, which
    the manifest echoes.
    """
    raw = read_ini(path) if path is not None else {}
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    kwargs, pparams = {}, {}
    names = {f.name for f in fields(RunConfig)} - {"problem_params"}
    for key, text in raw.items():
        if key.startswith("problem."):
            continue
        if key not in names:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[key] = parse_field(key, text)
    problem = kwargs.get("problem", RunConfig.problem)
    if problem not in DEFAULTS:
        raise ConfigError(f"problem: unknown benchmark {problem!r}; choose from {', '.join(registry.PROBLEMS)}")
    for key, text in raw.items():
        if key.startswith("problem."):
            name = key[len("problem."):]
            pparams[name] = parse_problem_param(problem, name, text)
    cfg = RunConfig(**kwargs, problem_params=pparams).validate()
    try:
        registry.make_problem(cfg.problem, cfg.problem_params, cfg.n0)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"problem parameters: {exc}") from None
    return cfg, dict(raw)


def config_to_json(cfg: RunConfig) -> dict:
    out = {}
    for k, v in cfg.as_dict().items():
        if isinstance(v, tuple):
            v = list(v)
        elif k == "problem_params":
            v = {pk: list(pv) if isinstance(pv, tuple) else pv for pk, pv in v.items()}
        out[k] = v
    return out


def config_from_json(d: dict) -> RunConfig:
    d = dict(d)
    for k in ("stamps", "lr_boundaries"):
        if d.get(k) is not None:
            d[k] = tuple(d[k])
    d["problem_params"] = {k: tuple(v) if isinstance(v, list) else v
                           for k, v in d.get("problem_params", {}).items()}
    unknown = set(d) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return RunConfig(**d)


# -- manifest -----------------------------------------------------------------

def decisions(cfg: RunConfig) -> dict:
    return {
        "activation": cfg.activation,
        "init": cfg.init,
        "input_scaling": ("type inputs mapped affinely onto [-1, 1] from their uniform ranges"
                          if cfg.input_scaling == "types" else "raw inputs"),
        "ridge": cfg.ridge,
        "regression_stamps": list(cfg.stamps),
        "regression_stamp_indices": cfg.stamp_indices(),
        "regression_row_weights": "equal",
        "warm_start_rounds": cfg.warm_start_rounds,
        "lr_schedule": {"lr": cfg.lr, "factor": cfg.lr_factor, "boundaries": list(cfg.lr_boundaries)},
        "minibatch_reshuffle": cfg.shuffle,
        "antithetic": cfg.N % 2 == 0,
        "flow_init": f"coefficients {cfg.flow_init_scale} * N(0, 1)",
        "type_quadrature": f"Gauss-Legendre order 32 per dimension, product grid capped at {GRID_CAP}",
        "splits": {"train": cfg.N, "validation": max(cfg.N // 2, 1), "test": cfg.N},
        "utility_reporting": UTILITY_CONVENTION if cfg.problem == "portfolio" else "objective as computed",
    }


def seed_info(seed: int) -> dict:
    return {name: {"entropy": ss.entropy, "spawn_key": list(ss.spawn_key)}
            for name, ss in split_seeds(seed).items()}


def versions() -> dict:
    return {"sigdfp": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def write_manifest(outdir, cfg: RunConfig, overrides: dict | None = None, status: str = "completed",
                   abort: dict | None = None, timing: dict | None = None, summary: dict | None = None,
                   command: str = "run") -> Path:
    manifest = {
        "command": command,
        "status": status,
        "abort": abort,
        "config": config_to_json(cfg),
        "overrides": overrides or {},
        "decisions": decisions(cfg),
        "seeds": {"root": cfg.seed, "streams": seed_info(cfg.seed)},
        "versions": versions(),
        "argv": sys.argv,
        "timing": timing or {},
        "summary": summary or {},
    }
    path = Path(outdir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def read_manifest(path) -> tuple[dict, RunConfig]:
    manifest = json.loads(Path(path).read_text())
    return manifest, config_from_json(manifest["config"])


# -- CSV ----------------------------------------------------------------------

class RoundLog:
    """Append-only ``rounds.csv`` writer; usable directly as the driver's ``on_round``."""

    header = ("round", "series", "key", "value")

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.header)
        self._fh.flush()

    def __call__(self, rec: RoundRecord) -> None:
        n = rec.round
        rows = [(n, "train_objective", i, fmt(v)) for i, v in enumerate(rec.train_objectives)]
        rows += [(n, "val_objective", "", fmt(rec.val_objective)),
                 (n, "val_stderr", "", fmt(rec.val_stderr)),
                 (n, "lr", "", fmt(rec.lr)),
                 (n, "seconds", "", fmt(rec.seconds)),
                 (n, "rank_deficient", "", int(rec.rank_deficient))]
        rows += [(n, "flow_gap", ch, fmt(v)) for ch, v in rec.flow_gap.items()]
        self._w.writerows(rows)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_rounds(path) -> list[RoundRecord]:
    """Rebuild :class:`RoundRecord` objects from ``rounds.csv``."""
    recs: dict[int, dict] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            r = recs.setdefault(int(row["round"]), {"train": {}, "gap": {}})
            s, v = row["series"], row["value"]
            if s == "train_objective":
                r["train"][int(row["key"])] = float(v)
            elif s == "flow_gap":
                r["gap"][row["key"]] = float(v)
            else:
                r[s] = float(v)
    out = []
    for n in sorted(recs):
        r = recs[n]
        out.append(RoundRecord(n, r["lr"], [r["train"][i] for i in sorted(r["train"])], r["val_objective"],
                               r["val_stderr"], r["gap"], r["seconds"], bool(r["rank_deficient"])))
    return out


def write_metrics(path, problem: str, evaluation) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("problem", "quantity", "metric", "value"))
        for q, v in evaluation.metrics.items():
            w.writerow((problem, q, "relative_l2", fmt(v)))
        w.writerow((problem, "J", "objective", fmt(evaluation.objective)))
        w.writerow((problem, "J", "objective_stderr", fmt(evaluation.stderr)))
        if evaluation.oracle_value is not None:
            w.writerow((problem, "J", "oracle_value", fmt(evaluation.oracle_value)))
        if problem == "portfolio":
            w.writerow((problem, "J", "reported_utility", fmt(abs(evaluation.objective))))
            if evaluation.oracle_value is not None:
                w.writerow((problem, "J", "reported_oracle_utility", fmt(abs(evaluation.oracle_value))))


def sample_paths(n_paths: int, k: int = 3, seed: int = 0) -> np.ndarray:
    return np.sort(np.random.default_rng(seed).choice(n_paths, size=min(k, n_paths), replace=False))


def write_trajectories(path, evaluation, grid: np.ndarray, paths) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("path", "source", "quantity", "step", "t", "value"))
        sources = [("learned", evaluation.learned)]
        if evaluation.oracle is not None:
            sources.append(("oracle", evaluation.oracle))
        for i in paths:
            for source, procs in sources:
                for q, arr in procs.items():
                    for k, t in enumerate(grid):
                        w.writerow((int(i), source, q, k, fmt(t), fmt(arr[i, k])))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- checkpoints --------------------------------------------------------------

def save_run_checkpoint(path, result) -> None:
    """Nets, averaged flow coefficients and the schedule position in the header."""
    cfg = result.config
    meta = {
        "config": config_to_json(cfg),
        "rounds_completed": len(result.records),
        "schedule": {"lr": cfg.lr, "factor": cfg.lr_factor, "boundaries": list(cfg.lr_boundaries),
                     "next_round": len(result.records)},
        "flow_transforms": list(result.flow.transforms),
        "flow_ridge": result.flow.ridge,
    }
    control.save_checkpoint(path, result.nets, {"flow_coeffs": result.flow.coeffs}, meta)


def load_run_checkpoint(path):
    """Returns ``(config, nets, flow, meta)``."""
    from .measure_flow import MeasureFlowFunctional

    nets, extra, meta = control.load_checkpoint(path)
    cfg = config_from_json(meta["config"])
    flow = MeasureFlowFunctional(extra["flow_coeffs"], tuple(meta["flow_transforms"]), meta["flow_ridge"])
    return cfg, nets, flow, meta


def ensure_outdir(outdir) -> Path:
    """Create ``outdir`` and prove it is writable, else raise ConfigError naming it."""
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"outdir: cannot write to {out}: {exc.strerror or exc}") from None
    return out


def with_outdir(cfg: RunConfig, outdir) -> RunConfig:
    return replace(cfg, outdir=str(outdir))
