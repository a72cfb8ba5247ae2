"""Monte Carlo sweeps over two-layer models.

A run is fully determined by its :class:`ExperimentConfig`: every trial
draws from its own stream keyed by ``(seed, cell, snr, trial)``, so the
aggregated CSV does not depend on the number of worker processes.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .oracle import oracle_holistic, oracle_projection
from .pursuit import SolverParams, holistic_pursuit, layered_pursuit, projection_pursuit
from .sampler import DegenerateModelError, NoiseSpec, SamplerConfig, add_noise, sample_model, sample_signal, trial_rng

ALGORITHMS = ("holistic", "projection-bp", "projection-thr", "layered-thr", "oracle-holistic", "oracle-projection")
CSV_COLUMNS = ("ell1", "s2", "snr_db", "algo", "mean_sq_err", "stderr_sq_err", "support_rate", "trials", "seed")
_FIXED_DICT_KEY = 2**31 - 1


@dataclass
class ExperimentConfig:
    """Sweep description.

    Cells are given either explicitly (``cells``: list of ``[ell1, s2]``),
    by ``ell1`` plus a constant ``gap = s2 - ell1``, or as the grid
    ``ell1 x s2`` (cells with ``s2 <= ell1`` are skipped).  ``snr_db``
    entries may be ``None`` for noiseless runs.
    """

    dims: tuple = (50, 100, 50)
    ell1: tuple = ()
    s2: tuple = ()
    gap: int | None = None
    cells: tuple = ()
    snr_db: tuple = (25.0,)
    trials: int = 500
    seed: int = 0
    algorithms: tuple = ("holistic", "projection-bp")
    eta_rule: str = "discrepancy"
    eta_schedule: str = "ends"
    fixed_dict: bool = False
    gamma_min: float = 0.0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3:
            raise ValueError("experiments use two-layer models: dims = [n, m1, m2]")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms {sorted(unknown)}; choose from {ALGORITHMS}")
        if self.eta_rule != "discrepancy":
            raise ValueError("only the 'discrepancy' eta rule is available")
        self.algorithms = tuple(self.algorithms)
        self.snr_db = tuple(None if s is None else float(s) for s in self.snr_db)
        for l1, s2 in self.cell_list():
            if not 0 <= l1 < self.dims[1] or not 1 <= s2 <= self.dims[2]:
                raise ValueError(f"cell ({l1}, {s2}) outside the model dimensions")
            if s2 <= l1:
                raise ValueError(f"cell ({l1}, {s2}) needs s2 > ell1 to leave free dimensions")

    def cell_list(self) -> list:
        if self.cells:
            return [(int(a), int(b)) for a, b in self.cells]
        if self.gap is not None:
            return [(int(a), int(a) + int(self.gap)) for a in self.ell1]
        return [(int(a), int(b)) for a in self.ell1 for b in self.s2 if int(b) > int(a)]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        allowed = set(cls.__dataclass_fields__)
        extra = set(d) - allowed
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class TrialRecord:
    ell1: int
    s2: int
    snr_db: float | None
    trial: int
    seed: int
    sq_err: dict = field(default_factory=dict)
    norm_sq_err: dict = field(default_factory=dict)
    support: dict = field(default_factory=dict)
    runtime_ms: dict = field(default_factory=dict)
    degenerate: bool = False


def _run_algo(name, model, y, stack, sigma, ell1, s2, params, schedule):
    if name == "holistic":
        kw = {"sigma": sigma} if sigma > 0 else {"eta": 0.0}
        r = holistic_pursuit(model, y, [ell1], params=params, truth=stack, eta_schedule=schedule, **kw)
        return r.gammas[-1], r.support_recovered["all"]
    if name == "projection-bp":
        kw = {"sigma": sigma} if sigma > 0 else {"eta": 0.0}
        r = projection_pursuit(model, y, "bp", params=params, truth=stack, **kw)
        return r.gammas[-1], r.support_recovered["deep_support"]
    if name == "projection-thr":
        r = projection_pursuit(model, y, "thresholding", sparsity=s2, truth=stack)
        return r.gammas[-1], r.support_recovered["deep_support"]
    if name == "layered-thr":
        s1 = int(np.count_nonzero(stack.gammas[0]))
        r = layered_pursuit(model, y, "thresholding", sparsities=[s1, s2], truth=stack)
        return r.gammas[-1], r.support_recovered["deep_support"]
    pattern = stack.pattern(1e-9)
    if name == "oracle-holistic":
        return oracle_holistic(model, y, pattern).gammas[-1], True
    if name == "oracle-projection":
        return oracle_projection(model, y, pattern).gammas[-1], True
    raise ValueError(name)


def run_trial(config: ExperimentConfig, cell: int, snr_idx: int, trial: int) -> TrialRecord:
    ell1, s2 = config.cell_list()[cell]
    snr = config.snr_db[snr_idx]
    rec = TrialRecord(ell1, s2, snr, trial, config.seed)
    scfg = SamplerConfig(config.dims, s2, (ell1,), gamma_min=config.gamma_min)
    rng = trial_rng(config.seed, cell, snr_idx, trial)
    if config.fixed_dict:
        model = sample_model(scfg, trial_rng(config.seed, cell, _FIXED_DICT_KEY))
    else:
        model = sample_model(scfg, rng)
    try:
        stack, _ = sample_signal(model, scfg, rng)
    except DegenerateModelError:
        rec.degenerate = True
        return rec
    spec = NoiseSpec(sigma=0.0) if snr is None else NoiseSpec(snr_db=snr)
    y, sigma, _ = add_noise(stack.x, spec, rng)
    truth = stack.gammas[-1]
    params = SolverParams()
    for name in config.algorithms:
        t0 = time.perf_counter()
        est, ok = _run_algo(name, model, y, stack, sigma, ell1, s2, params, config.eta_schedule)
        rec.runtime_ms[name] = 1e3 * (time.perf_counter() - t0)
        err = float(np.sum((est - truth) ** 2))
        rec.sq_err[name] = err
        rec.norm_sq_err[name] = err / float(truth @ truth)
        rec.support[name] = bool(ok)
    return rec


_WORKER_CONFIG = None


def _init_worker(cfg_dict):
    global _WORKER_CONFIG
    _WORKER_CONFIG = ExperimentConfig.from_dict(cfg_dict)


def _worker(task):
    return run_trial(_WORKER_CONFIG, *task)


def run_experiment(config: ExperimentConfig, workers: int = 1, progress=None) -> list:
    """All trial records, ordered by ``(cell, snr, trial)`` whatever ``workers`` is."""
    tasks = [
        (c, s, t)
        for c in range(len(config.cell_list()))
        for s in range(len(config.snr_db))
        for t in range(config.trials)
    ]
    if workers <= 1:
        out = []
        for task in tasks:
            out.append(run_trial(config, *task))
            if progress:
                progress(len(out), len(tasks))
        return out
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(config.to_dict(),)) as pool:
        return list(pool.map(_worker, tasks, chunksize=max(1, len(tasks) // (8 * workers))))


def _stats(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(np.mean(v)), se


def aggregate(records, config: ExperimentConfig) -> list:
    """One row per (cell, snr, algorithm) in config order."""
    groups = {}
    for r in records:
        groups.setdefault((r.ell1, r.s2, r.snr_db), []).append(r)
    rows = []
    for l1, s2 in config.cell_list():
        for snr in config.snr_db:
            recs = [r for r in groups.get((l1, s2, snr), []) if not r.degenerate]
            for algo in config.algorithms:
                errs = [r.sq_err[algo] for r in recs]
                mean, se = _stats(errs)
                nmean, nse = _stats([r.norm_sq_err[algo] for r in recs])
                rate = float(np.mean([r.support[algo] for r in recs])) if recs else math.nan
                rows.append({
                    "ell1": l1, "s2": s2, "snr_db": snr, "algo": algo,
                    "mean_sq_err": mean, "stderr_sq_err": se, "support_rate": rate,
                    "trials": len(recs), "seed": config.seed,
                    "mean_norm_sq_err": nmean, "stderr_norm_sq_err": nse,
                    "degenerate": len(groups.get((l1, s2, snr), [])) - len(recs),
                })
    return rows


def _fmt(v):
    if v is None:
        return "inf"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def ratio_table(records, config: ExperimentConfig, num="holistic", den="projection-bp") -> list:
    """Per-cell ratio of mean squared errors with a delta-method standard error."""
    out = []
    for l1, s2 in config.cell_list():
        for snr in config.snr_db:
            recs = [r for r in records if (r.ell1, r.s2, r.snr_db) == (l1, s2, snr) and not r.degenerate]
            if not recs or num not in recs[0].sq_err or den not in recs[0].sq_err:
                continue
            a = np.array([r.sq_err[num] for r in recs])
            b = np.array([r.sq_err[den] for r in recs])
            ma, mb = a.mean(), b.mean()
            ratio = float(ma / mb) if mb > 0 else math.nan
            se = math.nan
            if len(recs) > 1 and mb > 0:
                # variance of a_bar/b_bar via the linearisation a - ratio * b
                se = float(np.std(a - ratio * b, ddof=1) / (math.sqrt(len(recs)) * mb))
            out.append({"ell1": l1, "s2": s2, "snr_db": snr, "ratio": ratio, "stderr": se})
    return out


def emit_report(records, config: ExperimentConfig, out_dir=None, figures: bool = False) -> dict:
    """Write ``results.csv``, ``trials.csv`` and ``summary.json`` (plus figures) into ``out_dir``.

    Returns the summary; the CSV text is under ``"csv"``.
    """
    if not records:
        raise ValueError("no trial records to report")
    rows = aggregate(records, config)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    summary = {
        "config": config.to_dict(),
        "snr_definition": "10*log10(||x||^2 / (n*sigma^2))",
        "ratios": ratio_table(records, config),
        "normalized": [
            {k: r[k] for k in ("ell1", "s2", "snr_db", "algo", "mean_norm_sq_err", "stderr_norm_sq_err")}
            for r in rows
        ],
        "degenerate_cells": sorted({(r.ell1, r.s2) for r in records if r.degenerate}),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(buf.getvalue(), encoding="utf-8")
        _write_trials(records, config, out / "trials.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        if figures:
            from .plotting import plot_report

            summary["figures"] = [str(p) for p in plot_report(rows, summary["ratios"], out)]
    summary["csv"] = buf.getvalue()
    return summary


def _write_trials(records, config, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["ell1", "s2", "snr_db", "trial", "algo", "sq_err", "norm_sq_err", "support", "runtime_ms", "seed"])
        for r in records:
            if r.degenerate:
                w.writerow([r.ell1, r.s2, _fmt(r.snr_db), r.trial, "", "", "", "", "", r.seed])
                continue
            for a in config.algorithms:
                w.writerow([r.ell1, r.s2, _fmt(r.snr_db), r.trial, a, repr(r.sq_err[a]),
                            repr(r.norm_sq_err[a]), int(r.support[a]), f"{r.runtime_ms[a]:.3f}", r.seed])
