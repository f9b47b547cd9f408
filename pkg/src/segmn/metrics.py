"""Evaluation metrics: MSE, per-query Spearman ρ / Kendall τ, and p@k."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)


def spearman_rho(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Tie-corrected Spearman ρ (Pearson correlation of average ranks).

    NaN when either side is constant.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(stats.spearmanr(pred, truth).statistic)


def kendall_tau(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Kendall τ-b (tie corrected). NaN when either side is constant."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(stats.kendalltau(pred, truth, variant="b").statistic)


def precision_at_k(pred: Sequence[float], truth: Sequence[float], k: int) -> float:
    """|predicted top-k ∩ true top-k| / k, higher score = more similar.

    Predicted top-k breaks ties by lower index; the true top-k set is widened
    to every candidate tied with the k-th true value.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if len(pred) < k:
        raise ValueError(f"p@{k} needs at least {k} candidates, got {len(pred)}")
    top_pred = np.argsort(-pred, kind="stable")[:k]
    kth = np.sort(truth)[::-1][k - 1]
    true_set = np.flatnonzero(truth >= kth)
    return len(np.intersect1d(top_pred, true_set)) / k


@dataclass
class EvalReport:
    mse: float
    spearman: float
    kendall: float
    p_at_10: float
    p_at_20: float
    n_pairs: int
    n_queries: int
    queries: list[dict] = field(default_factory=list)
    runtime_s: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def mse_e3(self) -> float:
        """MSE in units of 10^-3."""
        return self.mse * 1e3

    def summary(self) -> dict:
        return {
            "mse": self.mse,
            "mse_e3": self.mse_e3,
            "spearman": self.spearman,
            "kendall": self.kendall,
            "p@10": self.p_at_10,
            "p@20": self.p_at_20,
            "n_pairs": self.n_pairs,
            "n_queries": self.n_queries,
            "runtime_s": self.runtime_s,
        }

    def to_dict(self) -> dict:
        out = self.summary()
        out["queries"] = self.queries
        out["config"] = self.config
        return out


def _nanmean(xs: list[float]) -> float:
    xs = [x for x in xs if not np.isnan(x)]
    return float(np.mean(xs)) if xs else float("nan")


def metrics(pred: Sequence[Sequence[float]], truth: Sequence[Sequence[float]], ks: tuple[int, ...] = (10, 20)) -> EvalReport:
    """Aggregate per-query score lists.

    Queries whose correlation is undefined (constant predictions or targets)
    or that have fewer than k candidates are left out of the respective mean.
    """
    if len(pred) != len(truth):
        raise ValueError("pred and truth must have the same number of queries")
    sq_err = []
    rows = []
    rhos, taus = [], []
    pks: dict[int, list[float]] = {k: [] for k in ks}
    for q, (p, t) in enumerate(zip(pred, truth)):
        p = np.asarray(p, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if p.shape != t.shape:
            raise ValueError(f"query {q}: {len(p)} predictions for {len(t)} targets")
        sq_err.append((p - t) ** 2)
        rho, tau = spearman_rho(p, t), kendall_tau(p, t)
        rhos.append(rho)
        taus.append(tau)
        row = {"query": q, "n": len(p), "mse": float(np.mean((p - t) ** 2)) if len(p) else float("nan"), "spearman": rho, "kendall": tau}
        for k in ks:
            if len(p) >= k:
                v = precision_at_k(p, t, k)
                pks[k].append(v)
                row[f"p@{k}"] = v
            else:
                log.warning("query %d has %d candidates; p@%d skipped", q, len(p), k)
        rows.append(row)
    allerr = np.concatenate(sq_err) if sq_err else np.zeros(0)
    return EvalReport(
        mse=float(allerr.mean()) if allerr.size else float("nan"),
        spearman=_nanmean(rhos),
        kendall=_nanmean(taus),
        p_at_10=_nanmean(pks.get(10, [])),
        p_at_20=_nanmean(pks.get(20, [])),
        n_pairs=int(allerr.size),
        n_queries=len(rows),
        queries=rows,
    )
