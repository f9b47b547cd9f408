"""Training loop, evaluation, and the ablation / portability harnesses."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from . import autodiff as ad
from .datasets import Corpus, enumerate_pairs, load_corpus
from .metrics import EvalReport, metrics
from .model import VARIANTS, FeatureCache, GraphSimConfig, GraphSimStub, ModelConfig, SEGMN, make_batch

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class ExperimentConfig:
    variant: str = "dual"
    spm_layers: int = 1
    d: int = 64
    layers: int = 3
    dk: int = 64
    att_dim: int = 16
    conv_channels: tuple[int, ...] = (16, 16)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    dataset: str = ""
    val_fraction: float = 0.05
    eval_every: int = 0
    baseline: bool = False
    spm_positions: tuple[int, ...] = ()
    target_mse: float = 0.0  # stop early once validation MSE falls to this (0 disables)
    self_pairs: bool = False  # also train on (G, G) with target 1

    def __post_init__(self):
        # YAML 1.1 reads "1e-08" as a string; coerce numeric fields explicitly
        for name in ("lr", "beta1", "beta2", "eps", "val_fraction", "target_mse"):
            setattr(self, name, float(getattr(self, name)))
        for name in ("spm_layers", "d", "layers", "dk", "att_dim", "batch_size", "epochs", "seed", "eval_every"):
            setattr(self, name, int(getattr(self, name)))
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.spm_layers < 0:
            raise ValueError("spm_layers must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.spm_positions = tuple(int(p) for p in self.spm_positions)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["conv_channels"] = list(self.conv_channels)
        out["spm_positions"] = list(self.spm_positions)
        return out

    def with_(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(kw)
        return ExperimentConfig(**d)


def config_from_mapping(raw: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return ExperimentConfig(**raw)


def load_config(path: str | Path) -> ExperimentConfig:
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict) or any(isinstance(v, dict) for v in raw.values()):
        raise ValueError(f"{path}: config must be a flat key: value map")
    return config_from_mapping(raw)


def build_model(cfg: ExperimentConfig, corpus: Corpus):
    if cfg.baseline:
        return GraphSimStub(GraphSimConfig(cfg.d, cfg.layers, cfg.spm_positions, cfg.conv_channels, corpus.label_count, corpus.n_max, cfg.seed))
    return SEGMN(
        ModelConfig(cfg.variant, cfg.d, cfg.layers, cfg.dk, cfg.spm_layers, cfg.conv_channels, cfg.att_dim, corpus.label_count, corpus.n_max, cfg.seed)
    )


def predict(model, pairs: Sequence[tuple], cache: FeatureCache, batch_size: int = 256) -> np.ndarray:
    """Forward pass without a tape; never touches parameters."""
    out = []
    for k in range(0, len(pairs), batch_size):
        out.append(model(make_batch(pairs[k:k + batch_size], cache)).values)
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model, corpus: Corpus, cache: FeatureCache | None = None, batch_size: int = 256) -> EvalReport:
    """Every test graph queried against every train graph."""
    t0 = time.perf_counter()
    cache = cache or FeatureCache(corpus.graphs, corpus.label_count, corpus.n_max)
    stream = list(enumerate_pairs(corpus, "eval"))
    pred = predict(model, [(p.g1, p.g2) for p in stream], cache, batch_size)
    n_cand = len(corpus.train_ids)
    truth = np.array([p.target for p in stream])
    preds = [pred[q * n_cand:(q + 1) * n_cand] for q in range(len(corpus.test_ids))]
    truths = [truth[q * n_cand:(q + 1) * n_cand] for q in range(len(corpus.test_ids))]
    report = metrics(preds, truths)
    for row, qid in zip(report.queries, corpus.test_ids):
        row["query_id"] = qid
    report.runtime_s = time.perf_counter() - t0
    return report


@dataclass
class TrainResult:
    model: object
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mse: float = float("inf")
    config: dict = field(default_factory=dict)


def _snapshot(params) -> dict[str, np.ndarray]:
    return {k: p.values.copy() for k, p in params.items()}


def train(
    cfg: ExperimentConfig,
    corpus: Corpus | None = None,
    log_path: str | Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Minimise mean squared error between predicted and normalized-GED targets.

    With ``self_pairs`` the (G, G) pairs (target 1) join the train pairs. A
    seeded fraction of the pairs is held out for validation; the parameters
    with the lowest validation MSE are restored at the end.
    """
    corpus = corpus if corpus is not None else load_corpus(cfg.dataset)
    model = build_model(cfg, corpus)
    params = model.params()
    cache = FeatureCache(corpus.graphs, corpus.label_count, corpus.n_max)

    pairs = list(enumerate_pairs(corpus, "train", seed=cfg.seed, include_self=cfg.self_pairs))
    n_val = int(round(cfg.val_fraction * len(pairs)))
    val, fit = pairs[:n_val], pairs[n_val:]
    if not fit:
        raise ValueError("no training pairs")
    val_pairs = [(p.g1, p.g2) for p in val]
    val_y = np.array([p.target for p in val])

    opt = ad.Adam(params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps)
    result = TrainResult(model, config=cfg.to_dict())
    best = _snapshot(params)
    logf = open(log_path, "a") if log_path else None
    t0 = time.perf_counter()
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(fit))
            sq, n = 0.0, 0
            for k in range(0, len(order), cfg.batch_size):
                chunk = [fit[j] for j in order[k:k + cfg.batch_size]]
                batch = make_batch([(p.g1, p.g2) for p in chunk], cache)
                y = np.array([p.target for p in chunk])
                opt.zero_grad()
                with ad.Tape() as tape:
                    loss = ad.mse(model(batch), y)
                if not np.isfinite(loss.item()):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {k // cfg.batch_size}")
                tape.backward(loss)
                opt.step()
                sq += loss.item() * len(chunk)
                n += len(chunk)
            rec = {"epoch": epoch, "train_mse": sq / n, "pairs": n}
            if val_pairs:
                rec["val_mse"] = float(np.mean((predict(model, val_pairs, cache) - val_y) ** 2))
            if cfg.eval_every and epoch % cfg.eval_every == 0 and corpus.test_ids:
                rec["test"] = evaluate(model, corpus, cache).summary()
            rec["wallclock"] = time.perf_counter() - t0
            score = rec.get("val_mse", rec["train_mse"])
            if score < result.best_val_mse:
                result.best_val_mse, result.best_epoch = score, epoch
                best = _snapshot(params)
            result.history.append(rec)
            if logf:
                logf.write(json.dumps(rec) + "\n")
                logf.flush()
            if on_epoch:
                on_epoch(rec)
            log.info("epoch %d train_mse %.5f val_mse %s", epoch, rec["train_mse"], rec.get("val_mse"))
            if cfg.target_mse and score <= cfg.target_mse:
                break
    finally:
        if logf:
            logf.close()
    for k, p in params.items():
        p.values = best[k]
    return result


# --------------------------------------------------------------------------
# harnesses

ABLATION_ROWS = (
    ("node", "node", 0),
    ("edge", "edge", 0),
    ("DE(node+edge)", "dual", 0),
    ("node+SPM", "node", 1),
    ("edge+SPM", "edge", 1),
    ("DE+SPM(SEGMN)", "dual", 1),
)


def _row(name: str, fn) -> dict:
    try:
        report = fn()
        return {"model": name, "status": "ok", "mse": report.mse, "mse_e3": report.mse_e3, "spearman": report.spearman, "p@10": report.p_at_10}
    except Exception as exc:  # a failed run marks its row, the harness continues
        log.exception("run %s failed", name)
        return {"model": name, "status": f"failed: {type(exc).__name__}: {exc}", "mse": None, "mse_e3": None, "spearman": None, "p@10": None}


def ablation_harness(base: ExperimentConfig, corpus: Corpus) -> list[dict]:
    rows = []
    for name, variant, spm in ABLATION_ROWS:
        cfg = base.with_(variant=variant, spm_layers=spm, baseline=False)
        rows.append(_row(name, lambda cfg=cfg: evaluate(train(cfg, corpus).model, corpus)))
    return rows


PORTABILITY_POSITIONS = ((), (1,), (1, 2), (1, 2, 3))


def portability_harness(base: ExperimentConfig, corpus: Corpus, positions: Sequence[Sequence[int]] = PORTABILITY_POSITIONS) -> list[dict]:
    rows = []
    for pos in positions:
        cfg = base.with_(baseline=True, spm_positions=tuple(pos))
        holder = {}

        def run(cfg=cfg):
            res = train(cfg, corpus)
            holder["spm_executions"] = res.model.spm_executions
            return evaluate(res.model, corpus)

        row = _row(str(len(pos)), run)
        row["spm_positions"] = list(pos)
        row["spm_executions"] = holder.get("spm_executions")
        rows.append(row)
    return rows


def format_table(rows: list[dict], first: str = "model") -> str:
    head = f"{first:<16} {'MSE(1e-3)':>10} {'rho':>7} {'p@10':>7}  status"
    lines = [head, "-" * len(head)]
    for r in rows:
        if r["status"] == "ok":
            lines.append(f"{r['model']:<16} {r['mse_e3']:>10.3f} {r['spearman']:>7.3f} {r['p@10']:>7.3f}  ok")
        else:
            lines.append(f"{r['model']:<16} {'-':>10} {'-':>7} {'-':>7}  {r['status']}")
    return "\n".join(lines)
