"""Support-recovery and estimation-error metrics, plus scripted synthetic
experiment suites (rate verification, support recovery, tuning sweeps)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ar1_factor, er_factor, grid_factor, gram_factors, sample_ksum_gaussian
from .ksum import (
    Dims,
    FactorSet,
    identifiable_decompose,
    ksum_eigensystem,
    ksum_spectral_norm,
)
from .solver import SolverConfig, solve

__all__ = [
    "SUPPORT_EPS",
    "EdgeSupport",
    "ExperimentSpec",
    "edge_support",
    "mcc",
    "precision_recall",
    "estimation_errors",
    "effective_sample_size",
    "make_truth",
    "run_rate_experiment",
    "run_support_experiment",
    "tuning_sweep",
    "write_table",
]

SUPPORT_EPS = 1e-8


@dataclass(frozen=True)
class EdgeSupport:
    """Per-factor sets of off-diagonal (i < j) index pairs."""

    dims: Dims
    edges: tuple[frozenset, ...]


def edge_support(f: FactorSet, eps: float = SUPPORT_EPS) -> EdgeSupport:
    sets = []
    for psi in f.psi:
        d = psi.shape[0]
        sets.append(
            frozenset(
                (i, j) for i in range(d) for j in range(i + 1, d) if abs(psi[i, j]) > eps
            )
        )
    return EdgeSupport(f.dims, tuple(sets))


def _confusion(truth: EdgeSupport, est: EdgeSupport):
    if truth.dims.d != est.dims.d:
        raise ValueError("dimension mismatch between edge supports")
    tp = tn = fp = fn = 0
    for k, dk in enumerate(truth.dims.d):
        universe = {(i, j) for i in range(dk) for j in range(i + 1, dk)}
        t, e = truth.edges[k], est.edges[k]
        tp += len(t & e)
        fp += len(e - t)
        fn += len(t - e)
        tn += len(universe - t - e)
    return tp, tn, fp, fn


def mcc(truth: EdgeSupport, est: EdgeSupport) -> float:
    """Matthews correlation coefficient pooled over factors; 0 when degenerate."""
    tp, tn, fp, fn = _confusion(truth, est)
    denom = math.sqrt(float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / denom


def precision_recall(truth: EdgeSupport, est: EdgeSupport) -> tuple[float, float]:
    """Edge-detection precision and recall; empty selections count as precision 1."""
    tp, _, fp, fn = _confusion(truth, est)
    precision = tp / (tp + fp) if tp + fp > 0 else 1.0
    recall = tp / (tp + fn) if tp + fn > 0 else 1.0
    return precision, recall


def estimation_errors(truth: FactorSet, est: FactorSet) -> dict:
    """Errors of the Kronecker sums, invariant to factor trace shifts."""
    if truth.dims.d != est.dims.d:
        raise ValueError("dimension mismatch")
    dims = truth.dims
    delta = est - truth
    di = identifiable_decompose(delta)
    frob2 = dims.p * di.tau**2 + sum(
        dims.m(k) * float(np.sum(di.tilde[k] ** 2)) for k in range(dims.K)
    )
    frob_full = math.sqrt(max(frob2, 0.0))
    it = identifiable_decompose(truth)
    truth_frob = math.sqrt(
        dims.p * it.tau**2
        + sum(dims.m(k) * float(np.sum(it.tilde[k] ** 2)) for k in range(dims.K))
    )
    spectral = ksum_spectral_norm(ksum_eigensystem(delta))
    factorwise = []
    for k in range(dims.K):
        off = delta.psi[k] - np.diag(np.diag(delta.psi[k]))
        factorwise.append(float(np.linalg.norm(off)))
    diag_err = math.sqrt(
        max(dims.p * di.tau**2 + sum(
            dims.m(k) * float(np.sum(np.diag(di.tilde[k]) ** 2)) for k in range(dims.K)
        ), 0.0)
    )
    return {
        "frob_full": frob_full,
        "frob_rel": frob_full / truth_frob if truth_frob > 0 else frob_full,
        "spectral": spectral,
        "factorwise": factorwise,
        "diag_err": diag_err,
        "tau_err": abs(di.tau),
    }


def effective_sample_size(dims: Dims, n: int) -> float:
    """n * min_k m_k / log p (natural log)."""
    return n * min(dims.ms) / math.log(dims.p)


@dataclass(frozen=True)
class ExperimentSpec:
    model: str  # er | grid | ar1
    dims: Dims
    edges: tuple[int, ...] = ()
    ar_coeff: float = 0.5
    n_list: tuple[int, ...] = (10,)
    rho_grid: tuple[float, ...] = tuple(np.logspace(-3, 1, 7).tolist())
    trials: int = 10
    seed: int = 0
    max_iter: int = 400

    def __post_init__(self):
        if self.model not in ("er", "grid", "ar1"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.trials < 1 or any(n < 1 for n in self.n_list):
            raise ValueError("counts must be positive")

    def to_json(self) -> str:
        return json.dumps(
            {
                "model": self.model,
                "dims": list(self.dims.d),
                "edges": list(self.edges),
                "ar_coeff": self.ar_coeff,
                "n_list": list(self.n_list),
                "rho_grid": list(self.rho_grid),
                "trials": self.trials,
                "seed": self.seed,
                "max_iter": self.max_iter,
            }
        )


def make_truth(spec: ExperimentSpec, trial_seed: int) -> FactorSet:
    dims = spec.dims
    if spec.model == "ar1":
        return FactorSet(dims, [ar1_factor(dk, spec.ar_coeff) for dk in dims.d])
    edges = spec.edges if spec.edges else tuple(dk for dk in dims.d)
    gen = er_factor if spec.model == "er" else grid_factor
    return FactorSet(
        dims, [gen(dk, q, trial_seed + 1000 * k) for k, (dk, q) in enumerate(zip(dims.d, edges))]
    )


def _trial_seed(spec: ExperimentSpec, *indices: int) -> int:
    s = spec.seed
    for ix in indices:
        s = (s * 1_000_003 + ix + 1) % (2**31)
    return s


def _map(fn, items, threads: int = 1):
    """Deterministic map: results in input order regardless of thread count."""
    if threads <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _fit(gram, n, rho_bar, max_iter):
    cfg = SolverConfig(rho_bar=rho_bar, max_iter=max_iter)
    est, _ = solve(gram, n=n, config=cfg)
    return est


def run_rate_experiment(spec: ExperimentSpec, threads: int = 1) -> list[dict]:
    """Mean relative Frobenius error per n-cell, with oracle-tuned rho_bar.

    For each cell the rho_bar grid is swept and the best mean error kept,
    standing in for cross-validation at desk scale.
    """

    def one(cell):
        n, rb, t = cell
        seed = _trial_seed(spec, n, t)
        truth = make_truth(spec, seed)
        data = sample_ksum_gaussian(truth, n, seed)
        est = _fit(gram_factors(data), n, rb, spec.max_iter)
        return estimation_errors(truth, est)["frob_rel"]

    rows = []
    for n in spec.n_list:
        cells = [(n, rb, t) for rb in spec.rho_grid for t in range(spec.trials)]
        errs_flat = _map(one, cells, threads)
        per_rho = {}
        for (n_, rb, t), e in zip(cells, errs_flat):
            per_rho.setdefault(rb, []).append(e)
        best_rb = min(per_rho, key=lambda rb: float(np.mean(per_rho[rb])))
        errs = per_rho[best_rb]
        rows.append(
            {
                "n": n,
                "n_eff": effective_sample_size(spec.dims, n),
                "rho_bar": best_rb,
                "mean_frob_rel": float(np.mean(errs)),
                "std_frob_rel": float(np.std(errs)),
            }
        )
    return rows


def run_support_experiment(spec: ExperimentSpec, threads: int = 1) -> list[dict]:
    """Support recovery at the best rho_bar on the grid, per sample size."""

    def one(cell):
        n, rb, t = cell
        seed = _trial_seed(spec, n, t)
        truth = make_truth(spec, seed)
        data = sample_ksum_gaussian(truth, n, seed)
        est = _fit(gram_factors(data), n, rb, spec.max_iter)
        ts, es = edge_support(truth), edge_support(est)
        return (mcc(ts, es), *precision_recall(ts, es))

    rows = []
    for n in spec.n_list:
        best = None
        for rb in spec.rho_grid:
            results = _map(one, [(n, rb, t) for t in range(spec.trials)], threads)
            mccs = [r[0] for r in results]
            precs = [r[1] for r in results]
            recs = [r[2] for r in results]
            cell = {
                "p": spec.dims.p,
                "K": spec.dims.K,
                "n": n,
                "rho_bar": rb,
                "precision": float(np.mean(precs)),
                "recall": float(np.mean(recs)),
                "mcc": float(np.mean(mccs)),
            }
            if best is None or cell["mcc"] > best["mcc"]:
                best = cell
        rows.append(best)
    return rows


def tuning_sweep(spec: ExperimentSpec, rho_ratios=(1.0,), threads: int = 1) -> list[dict]:
    """Sweep rho_bar (and optional per-factor deviations rho_bar_2 = ratio * rho_bar).

    Ratios other than 1 scale the penalty of every factor after the first,
    reproducing the near-optimality check of the single-parameter rule.
    """
    dims = spec.dims

    def one(cell):
        n, rb, ratio, t = cell
        seed = _trial_seed(spec, n, t)
        truth = make_truth(spec, seed)
        data = sample_ksum_gaussian(truth, n, seed)
        logp = math.log(dims.p)
        rho = tuple(
            (rb if k == 0 else rb * ratio) * math.sqrt(logp / (n * dims.m(k)))
            for k in range(dims.K)
        )
        cfg = SolverConfig(rho_override=rho, max_iter=spec.max_iter)
        est, _ = solve(gram_factors(data), n=n, config=cfg)
        errs = estimation_errors(truth, est)
        return (
            mcc(edge_support(truth), edge_support(est)),
            errs["frob_rel"],
            errs["spectral"],
        )

    rows = []
    for n in spec.n_list:
        for rb in spec.rho_grid:
            for ratio in rho_ratios:
                results = _map(
                    one, [(n, rb, ratio, t) for t in range(spec.trials)], threads
                )
                mccs = [r[0] for r in results]
                frobs = [r[1] for r in results]
                specs_ = [r[2] for r in results]
                rows.append(
                    {
                        "n": n,
                        "rho_bar": rb,
                        "ratio": ratio,
                        "mcc": float(np.mean(mccs)),
                        "frob_rel": float(np.mean(frobs)),
                        "spectral": float(np.mean(specs_)),
                    }
                )
    return rows


def write_table(rows: list[dict], csv_path, manifest: dict | None = None) -> None:
    """CSV with a header row, plus a JSON manifest next to it."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            for row in rows:
                writer.writerow(
                    {k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()}
                )
    if manifest is not None:
        with open(csv_path.with_suffix(".manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
