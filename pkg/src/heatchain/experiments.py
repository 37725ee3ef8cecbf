"""Experiment recipes behind the command-line front end.

An experiment is a JSON document (``ExperimentConfig``) plus a subcommand.
Each subcommand expands the config into independent trajectories, runs them
on a thread pool, reduces the per-trajectory products in trajectory-index
order and returns CSV rows plus a JSON summary.

Site numbers in configs and CSV files are 1-based (site 1 touches the left
bath); the Python API underneath is 0-based.

Trajectory ``k`` of sweep point ``i`` uses the stream
``derive_stream(seed, i * trajectories + k)``.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import jsonschema
import numpy as np

from . import stats
from .engine import RunConfig, RunReport, run
from .model import BathSpec, RateKind, RateSpec, Topology
from .observables import FluxLedger, conductivity_estimate, time_average_profile


class ConfigError(ValueError):
    """The experiment config does not satisfy the schema."""


_POS = {"type": "number", "exclusiveMinimum": 0}
_INT_OR_LIST = {"oneOf": [{"type": "integer", "minimum": 1},
                          {"type": "array", "items": {"type": "integer", "minimum": 1},
                           "minItems": 1}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "topology", "run"],
    "properties": {
        "model": {
            "type": "object", "additionalProperties": False, "required": ["rate"],
            "properties": {
                "rate": {"enum": ["sum-sqrt", "harmonic-sqrt", "capped-min-sqrt"]},
                "cap": {"oneOf": [_POS, {"type": "null"}]},
            },
        },
        "topology": {
            "type": "object", "additionalProperties": False, "required": ["N"],
            "properties": {
                "kind": {"enum": ["chain", "lattice"]},
                "N": _INT_OR_LIST,
                "M": _INT_OR_LIST,
            },
        },
        "baths": {
            "type": "object", "additionalProperties": False,
            "required": ["T_left", "T_right"],
            "properties": {"T_left": _POS, "T_right": _POS},
        },
        "run": {
            "type": "object", "additionalProperties": False, "required": ["T_end"],
            "properties": {
                "T_end": _POS,
                "burn_in": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "trajectories": {"type": "integer", "minimum": 1},
            },
        },
        "sampling": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "h": _POS,
                "sites": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "max_samples": {"type": "integer", "minimum": 1},
            },
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"directory": {"type": "string"}, "prefix": {"type": "string"}},
        },
    },
}


def _as_list(value) -> list:
    return list(value) if isinstance(value, list) else [value]


@dataclass
class ExperimentConfig:
    rate: RateSpec
    kind: str
    N: list
    M: list
    baths: BathSpec
    T_end: float
    burn_in: float = 0.0
    seed: int = 0
    trajectories: int = 1
    h: Optional[float] = None
    sites: Optional[list] = None      # 1-based
    max_samples: Optional[int] = None
    directory: str = "."
    prefix: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(doc, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"{where}: {exc.message}") from None
        model, top, rn = doc["model"], doc["topology"], doc["run"]
        baths = doc.get("baths", {"T_left": 1.0, "T_right": 2.0})
        smp, out = doc.get("sampling", {}), doc.get("output", {})
        try:
            rate = RateSpec(RateKind.parse(model["rate"]), model.get("cap"))
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from None
        burn_in = float(rn.get("burn_in", 0.0))
        if burn_in > rn["T_end"]:
            raise ConfigError("run: burn_in exceeds T_end")
        kind = top.get("kind", "chain")
        M = _as_list(top.get("M", 1))
        if kind == "chain" and M != [1]:
            raise ConfigError("topology: a chain has M = 1")
        return cls(rate=rate, kind=kind, N=_as_list(top["N"]), M=M,
                   baths=BathSpec(float(baths["T_left"]), float(baths["T_right"])),
                   T_end=float(rn["T_end"]), burn_in=burn_in, seed=int(rn.get("seed", 0)),
                   trajectories=int(rn.get("trajectories", 1)), h=smp.get("h"),
                   sites=smp.get("sites"), max_samples=smp.get("max_samples"),
                   directory=out.get("directory", "."), prefix=out.get("prefix", ""),
                   raw=copy.deepcopy(doc))

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(doc)

    def topology(self, N: int, M: int = 1) -> Topology:
        return Topology.chain(N) if self.kind == "chain" and M == 1 else Topology.lattice(M, N)

    def run_config(self, topology: Topology, trajectory: int, **extra) -> RunConfig:
        return RunConfig(topology=topology, rate=self.rate, baths=self.baths, T_end=self.T_end,
                         burn_in=self.burn_in, seed=self.seed, trajectory=trajectory, **extra)


# ---------------------------------------------------------------------------
# recipes: desk-scale versions of the five numerical experiments

RECIPES = {
    "conductivity-1d": {
        "model": {"rate": "sum-sqrt"},
        "topology": {"kind": "chain", "N": [6, 10, 14, 18, 22, 26, 30, 34, 38, 40]},
        "baths": {"T_left": 1.0, "T_right": 2.0},
        "run": {"T_end": 2.0e5, "burn_in": 2.0e4, "seed": 1, "trajectories": 1},
    },
    "conductivity-2d": {
        "model": {"rate": "harmonic-sqrt"},
        "topology": {"kind": "lattice", "N": 20, "M": [1, 2, 4]},
        "baths": {"T_left": 1.0, "T_right": 2.0},
        "run": {"T_end": 5.0e5, "burn_in": 5.0e4, "seed": 2, "trajectories": 1},
    },
    "marginals": {
        "model": {"rate": "harmonic-sqrt"},
        "topology": {"kind": "chain", "N": 40},
        "baths": {"T_left": 1.0, "T_right": 2.0},
        "run": {"T_end": 8.0e7 + 8.0e6, "burn_in": 8.0e6, "seed": 3, "trajectories": 1},
        "sampling": {"h": 10.0},
    },
    "profile": {
        "model": {"rate": "harmonic-sqrt"},
        "topology": {"kind": "chain", "N": 40},
        "baths": {"T_left": 1.0, "T_right": 2.0},
        "run": {"T_end": 8.0e7 + 8.0e6, "burn_in": 8.0e6, "seed": 3, "trajectories": 1},
    },
    "independence": {
        "model": {"rate": "harmonic-sqrt"},
        "topology": {"kind": "chain", "N": [20, 40, 60]},
        "baths": {"T_left": 1.0, "T_right": 2.0},
        "run": {"T_end": 1.0e7 + 1.0e6, "burn_in": 1.0e6, "seed": 5, "trajectories": 1},
        "sampling": {"h": 1.0},
    },
}


def recipe(name: str, **overrides) -> dict:
    """A copy of a recipe; keyword ``section=dict`` updates are merged in."""
    doc = copy.deepcopy(RECIPES[name])
    for section, values in overrides.items():
        doc.setdefault(section, {}).update(values)
    return doc


# ---------------------------------------------------------------------------
# ensembles

def run_ensemble(configs: dict, threads: int = 1,
                 runner: Callable[[RunConfig], RunReport] = run) -> dict:
    """Run ``{trajectory index: RunConfig}`` on a thread pool.

    The compiled kernel releases the GIL, so threads give real parallelism.
    The result maps index to report; consumers iterate it in sorted order.
    """
    keys = sorted(configs)
    if threads <= 1 or len(keys) <= 1:
        return {k: runner(configs[k]) for k in keys}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {k: pool.submit(runner, configs[k]) for k in keys}
        return {k: futures[k].result() for k in keys}


def _jobs(cfg: ExperimentConfig, points: Sequence, make: Callable) -> dict:
    K = cfg.trajectories
    return {i * K + k: make(p, i * K + k) for i, p in enumerate(points) for k in range(K)}


def _point_reports(cfg: ExperimentConfig, reports: dict, i: int) -> list:
    K = cfg.trajectories
    return [reports[i * K + k] for k in range(K)]


@dataclass
class ExperimentResult:
    name: str
    header: list
    rows: list
    summary: dict

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def write(self, directory: str, prefix: str = "") -> list:
        os.makedirs(directory, exist_ok=True)
        csv_path = os.path.join(directory, f"{prefix}{self.name}.csv")
        json_path = os.path.join(directory, f"{prefix}{self.name}.summary.json")
        with open(csv_path, "w") as fh:
            fh.write(self.csv_text())
        with open(json_path, "w") as fh:
            json.dump(_jsonable(self.summary), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return [csv_path, json_path]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


CONDUCTIVITY_HEADER = ["rate_kind", "N", "M", "T_end", "kappa", "q", "stderr", "events", "seed"]
MARGINALS_HEADER = ["site", "alpha", "theta", "chi2", "dof", "threshold", "pass"]
PROFILE_HEADER = ["site", "empirical_mean", "empirical_se", "predicted_mean"]
INDEPENDENCE_HEADER = ["N", "chi2", "dof", "threshold", "sqrt_chi2"]


# ---------------------------------------------------------------------------
# conductivity sweeps

def merged_ledger(reports: Sequence[RunReport]) -> FluxLedger:
    ledgers = sorted((FluxLedger.from_report(r) for r in reports), key=lambda l: l.keys[0])
    out = ledgers[0]
    for led in ledgers[1:]:
        out = out.merge(led)
    return out


def _conductivity(cfg: ExperimentConfig, points: list, threads: int, name: str,
                  reports: Optional[dict] = None) -> ExperimentResult:
    if reports is None:
        reports = run_ensemble(
            _jobs(cfg, points, lambda p, idx: cfg.run_config(cfg.topology(p[0], p[1]), idx)),
            threads)
    rows, estimates = [], []
    for i, (N, M) in enumerate(points):
        top = cfg.topology(N, M)
        est = conductivity_estimate(merged_ledger(_point_reports(cfg, reports, i)),
                                    cfg.baths, top, cfg.seed)
        estimates.append(est)
        rows.append([cfg.rate.kind.label, N, M, cfg.T_end, est.kappa, est.q, est.q_se,
                     est.events, cfg.seed])
    summary = {"rate_kind": cfg.rate.kind.label, "trajectories": cfg.trajectories,
               "burn_in": cfg.burn_in, "T_left": cfg.baths.T_left, "T_right": cfg.baths.T_right,
               "stderr": "batch-means standard error of q"}
    if name == "conductivity-1d" and len(points) >= 2:
        fit = stats.origin_fit([1.0 / N for N, _ in points], [e.q for e in estimates])
        summary["fit"] = {"model": "q = slope / N", "slope": fit.slope, "r2": fit.r2,
                          "r2_uncentered": fit.r2_uncentered}
    return ExperimentResult(name, CONDUCTIVITY_HEADER, rows, summary)


def conductivity_1d(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Conductance against chain length (one row per N)."""
    return _conductivity(cfg, [(N, 1) for N in cfg.N], threads, "conductivity-1d")


def conductivity_2d(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Conductance against the number of rows M at fixed N."""
    N = cfg.N[0]
    return _conductivity(cfg, [(N, M) for M in cfg.M], threads, "conductivity-2d")


# ---------------------------------------------------------------------------
# single-site marginals

def _require_h(cfg: ExperimentConfig, name: str) -> float:
    if cfg.h is None:
        raise ConfigError(f"sampling: {name} needs a skeleton period h")
    return float(cfg.h)


def _zero_based(cfg: ExperimentConfig, n_sites: int, default: Sequence[int]) -> list:
    sites = cfg.sites if cfg.sites else list(default)
    bad = [s for s in sites if not 1 <= s <= n_sites]
    if bad:
        raise ConfigError(f"sampling: sites {bad} outside 1..{n_sites}")
    return [s - 1 for s in sites]


def _ticks(cfg: ExperimentConfig, h: float) -> Optional[float]:
    """T_end shortened so that at most ``max_samples`` ticks are taken."""
    if cfg.max_samples is None:
        return None
    return min(cfg.T_end, cfg.burn_in + cfg.max_samples * h)


def marginal_reports(cfg: ExperimentConfig, threads: int = 1) -> dict:
    N = cfg.N[0]
    h = _require_h(cfg, "marginals")
    sites = _zero_based(cfg, N, range(1, N + 1))
    t_end = _ticks(cfg, h)

    def make(_, idx):
        rc = cfg.run_config(cfg.topology(N), idx, h=h, marginal_sites=sites,
                            marginal_edges=stats.GOF_EDGES)
        if t_end is not None:
            rc.T_end = t_end
        return rc

    return run_ensemble(_jobs(cfg, [N], make), threads)


def marginals(cfg: ExperimentConfig, threads: int = 1,
              reports: Optional[dict] = None) -> ExperimentResult:
    """Gamma fit and 31-bin goodness of fit for each sampled site."""
    if reports is None:
        reports = marginal_reports(cfg, threads)
    ordered = [reports[k] for k in sorted(reports)]
    sites = ordered[0].marginal_sites
    counts = np.zeros_like(ordered[0].marginal_counts)
    st = np.zeros_like(ordered[0].marginal_stats)
    for rep in ordered:
        counts += rep.marginal_counts
        st += rep.marginal_stats
    rows, secondary = [], {}
    for j, site in enumerate(sites):
        n = int(st[j, 0])
        if st[j, 4] > 0:
            raise stats.AnalysisError(f"site {site + 1}: zero energies in the sample")
        fit = stats.gamma_mle(stats=stats.SampleStats(n, st[j, 1] / n, st[j, 2] / n, st[j, 3] / n))
        rep = stats.chisq_gof_counts(counts[j], np.diff(fit.cdf(stats.GOF_EDGES)), fitted_params=2)
        rows.append([int(site) + 1, fit.alpha, fit.theta, rep.statistic, rep.dof, rep.threshold,
                     rep.passed])
        secondary[int(site) + 1] = {"dof": rep.secondary_dof, "threshold": rep.secondary_threshold,
                                    "pass": rep.statistic < rep.secondary_threshold}
    summary = {"rate_kind": cfg.rate.kind.label, "N": cfg.N[0], "h": cfg.h,
               "samples_per_site": int(st[0, 0]) if len(sites) else 0,
               "gamma_convention": "shape alpha, scale theta, mean alpha*theta",
               "secondary_fitted_dof": secondary}
    return ExperimentResult("marginals", MARGINALS_HEADER, rows, summary)


# ---------------------------------------------------------------------------
# energy profile against the constant-flux prediction

def anchor_sites(N: int) -> tuple[int, int]:
    """1-based anchor sites: the fifth site from each end."""
    if N < 11:
        raise ConfigError("topology: profile needs N >= 11")
    return 5, N - 4


def profile_reports(cfg: ExperimentConfig, threads: int = 1) -> dict:
    N = cfg.N[0]
    return run_ensemble(_jobs(cfg, [N], lambda _, idx: cfg.run_config(cfg.topology(N), idx)),
                        threads)


def profile(cfg: ExperimentConfig, threads: int = 1,
            reports: Optional[dict] = None) -> ExperimentResult:
    """Empirical time-averaged profile with the prediction between the anchors."""
    if cfg.rate.kind is RateKind.CAPPED_MIN_SQRT:
        raise ConfigError("model: no closed-form flux for capped-min-sqrt")
    if reports is None:
        reports = profile_reports(cfg, threads)
    ordered = [reports[k] for k in sorted(reports)]
    profs = [time_average_profile(r) for r in ordered]
    mean = np.mean([p.mean for p in profs], axis=0)
    if len(profs) > 1:
        se = np.sqrt(np.sum([p.se ** 2 for p in profs], axis=0)) / len(profs)
    else:
        se = profs[0].se
    left, right = anchor_sites(cfg.N[0])
    kind = cfg.rate.kind
    pred = stats.predicted_profile(kind, stats.temperature_from_mean(kind, mean[left - 1]),
                                   stats.temperature_from_mean(kind, mean[right - 1]),
                                   right - left - 1)
    predicted = np.concatenate([[mean[left - 1]], pred.mean_energy, [mean[right - 1]]])
    rows = [[s, mean[s - 1], se[s - 1], predicted[s - left]] for s in range(left, right + 1)]
    span = abs(mean[right - 1] - mean[left - 1])
    dev = np.abs(predicted[1:-1] - mean[left:right - 1])
    summary = {"rate_kind": kind.label, "N": cfg.N[0], "anchors": [left, right],
               "predicted_flux": pred.flux, "anchor_span": span,
               "max_relative_deviation": float(dev.max() / span) if span > 0 else 0.0,
               "empirical_mean_all_sites": mean, "empirical_se_all_sites": se}
    return ExperimentResult("profile", PROFILE_HEADER, rows, summary)


# ---------------------------------------------------------------------------
# nearest-neighbour independence

def center_pair(N: int) -> list:
    """0-based indices of the 1-based sites N/2 and N/2 + 1."""
    if N < 2 or N % 2:
        raise ConfigError(f"topology: independence needs even N, got {N}")
    return [N // 2 - 1, N // 2]


def independence_reports(cfg: ExperimentConfig, threads: int = 1) -> dict:
    h = _require_h(cfg, "independence")
    t_end = _ticks(cfg, h)

    def make(N, idx):
        rc = cfg.run_config(cfg.topology(N), idx, h=h, sample_sites=center_pair(N))
        if t_end is not None:
            rc.T_end = t_end
        return rc

    return run_ensemble(_jobs(cfg, cfg.N, make), threads, runner=_independence_runner)


@dataclass
class _TableReport:
    """Contingency table of one trajectory; the raw samples are dropped."""
    table: np.ndarray
    events: int


def _independence_runner(rc: RunConfig) -> _TableReport:
    rep = run(rc)
    table = stats.independence_table(rep.samples[:, 0], rep.samples[:, 1])
    return _TableReport(table, rep.observed_events)


def independence(cfg: ExperimentConfig, threads: int = 1,
                 reports: Optional[dict] = None) -> ExperimentResult:
    """Pearson independence statistic of the two centre sites for each N."""
    if reports is None:
        reports = independence_reports(cfg, threads)
    rows, points = [], []
    for i, N in enumerate(cfg.N):
        table = sum(r.table for r in _point_reports(cfg, reports, i))
        rep = stats.independence_chisq_table(table)
        rows.append([N, rep.statistic, rep.dof, rep.threshold, math.sqrt(rep.statistic)])
        points.append((N, rep.statistic))
    summary = {"rate_kind": cfg.rate.kind.label, "h": cfg.h,
               "samples_per_N": int(sum(r.table.sum() for r in _point_reports(cfg, reports, 0)))}
    if len({N for N, _ in points}) >= 3:
        ex = stats.extrapolate_chisq(points)
        summary["extrapolation"] = {"model": "sqrt(chi2) = intercept + slope / N",
                                    "intercept": ex.intercept, "slope": ex.slope,
                                    "intercept_ci95": list(ex.intercept_ci),
                                    "sqrt_p95": ex.sqrt_threshold, "below_sqrt_p95": ex.passed}
    return ExperimentResult("independence", INDEPENDENCE_HEADER, rows, summary)


SUBCOMMANDS = {
    "conductivity-1d": conductivity_1d,
    "conductivity-2d": conductivity_2d,
    "marginals": marginals,
    "profile": profile,
    "independence": independence,
}
