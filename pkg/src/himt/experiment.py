"""Cross-validated training, evaluation and the magnification ablation."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from himt.autodiff import backward, no_grad
from himt.bags import GeneSignature, MultimodalBag, PatientRecord, group_genes, sample_instances
from himt.config import ExperimentConfig
from himt.errors import ContractError, MetricError, NumericError, PathError, TrainingError
from himt.layers import stream
from himt.metrics import (FoldReport, RiskTable, auc, c_index, kfold_split, summarize, write_folds_csv,
                          write_summary_csv)
from himt.mil import HiMT, ModelConfig
from himt.optim import Adam
from himt.survival import DiscreteLabel, TimeBins, combined_loss, discretize, fit_bins, hazards_from_logits

log = logging.getLogger(__name__)

ABLATION_SETTINGS: tuple[tuple[str, ...], ...] = (
    ("5x",), ("10x",), ("20x",), ("20x", "10x"), ("20x", "10x", "5x"),
)


@dataclass
class RunLog:
    fold: int
    epoch_losses: list[float] = field(default_factory=list)
    wall_clock: float = 0.0
    config_hash: str = ""


@dataclass
class FoldResult:
    fold: int
    model: HiMT
    bins: TimeBins
    horizon: float
    train_ids: list[str]
    test_ids: list[str]
    runlog: RunLog


def build_bags(records: Sequence[PatientRecord], signature: GeneSignature,
               cfg: ExperimentConfig) -> dict[str, MultimodalBag]:
    bags = {}
    for r in records:
        inst, counts = sample_instances(r, cfg.per_level_k, cfg.seed, cfg.levels)
        bags[r.patient_id] = MultimodalBag(r.patient_id, inst, group_genes(r.genes, signature),
                                           r.surv_time, r.censor, counts)
    return bags


def model_config(cfg: ExperimentConfig, bags: dict[str, MultimodalBag]) -> ModelConfig:
    first = next(iter(bags.values()))
    return ModelConfig(d_in=first.instances.shape[1],
                       gene_set_sizes=tuple(len(g) for g in first.gene_sets),
                       d_k=cfg.d_k, d_attn=cfg.d_attn, n_bins=cfg.n_bins, heads=cfg.heads,
                       enc_layers=cfg.enc_layers, dropout=cfg.dropout)


def fold_horizon(bags: dict[str, MultimodalBag], ids: Sequence[str]) -> float:
    """Median uncensored event time in ``ids``; the default AUC horizon."""
    return float(np.median([bags[i].surv_time for i in ids if bags[i].censor == 0]))


def train_fold(cfg: ExperimentConfig, bags: dict[str, MultimodalBag], train_ids: Sequence[str],
               fold: int = 0, test_ids: Sequence[str] = ()) -> FoldResult:
    """Batch-size-1 Adam training on ``train_ids`` only."""
    start = time.perf_counter()
    events = [bags[i].surv_time for i in train_ids if bags[i].censor == 0]
    bins = fit_bins(events, cfg.n_bins)
    labels = {i: DiscreteLabel(discretize(bags[i].surv_time, bins), bags[i].censor) for i in train_ids}
    model = HiMT.init(model_config(cfg, bags), stream(cfg.seed, "init", fold))
    opt = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    runlog = RunLog(fold, config_hash=cfg.digest())
    ids = list(train_ids)
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "order", fold, epoch).permutation(len(ids))
        drop_rng = stream(cfg.seed, "dropout", fold, epoch) if cfg.dropout > 0 else None
        total = 0.0
        for j in order:
            pid = ids[j]
            try:
                logits = model.forward(bags[pid], drop_rng)
                loss = combined_loss(hazards_from_logits(logits), labels[pid], cfg.beta, cfg.loss_event_term_survival)
            except NumericError as exc:
                raise TrainingError(f"fold {fold} epoch {epoch + 1} patient {pid}: {exc}") from None
            if not np.isfinite(loss.item()):
                raise TrainingError(f"fold {fold} epoch {epoch + 1} patient {pid}: non-finite loss")
            backward(loss)
            opt.step()
            total += loss.item()
        runlog.epoch_losses.append(total / len(ids))
        log.info("fold %d epoch %d loss %.4f", fold, epoch + 1, runlog.epoch_losses[-1])
    runlog.wall_clock = time.perf_counter() - start
    return FoldResult(fold, model, bins, fold_horizon(bags, train_ids), list(train_ids), list(test_ids), runlog)


def predict_risks(model: HiMT, bags: dict[str, MultimodalBag], ids: Sequence[str]) -> np.ndarray:
    with no_grad():
        return np.array([hazards_from_logits(model.forward(bags[i])).risk.item() for i in ids])


def evaluate(model: HiMT, bags: dict[str, MultimodalBag], ids: Sequence[str],
             horizon: float, fold: int = 0) -> FoldReport:
    table = RiskTable.build(ids, predict_risks(model, bags, ids), [bags[i].surv_time for i in ids],
                            [1 - bags[i].censor for i in ids])
    c, n = c_index(table)
    try:
        a = auc(table, horizon)
    except MetricError as exc:
        log.warning("fold %d: AUC undefined (%s)", fold, exc)
        a = float("nan")
    return FoldReport(fold, c, a, n)


# ---------------------------------------------------------------- files


def save_fold(result: FoldResult, out_dir: Path, cfg: ExperimentConfig) -> None:
    meta = {
        "fold": str(result.fold),
        "seed": str(cfg.seed),
        "levels": ",".join(cfg.levels),
        "per_level_k": str(cfg.per_level_k),
        "bins": ",".join(repr(c) for c in result.bins.cuts),
        "horizon": repr(result.horizon),
        "test_ids": ",".join(result.test_ids),
    }
    result.model.save(out_dir / f"fold{result.fold}.ckpt", meta)
    (out_dir / f"runlog_fold{result.fold}.json").write_text(json.dumps(result.runlog.__dict__, indent=1) + "\n")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("HIMT_THREADS", "1")))
    except ValueError:
        return 1


def _run_fold(args):
    cfg, bags, fold, train_ids, test_ids = args
    res = train_fold(cfg, bags, train_ids, fold, test_ids)
    return res, evaluate(res.model, bags, test_ids, res.horizon, fold)


def cross_validate(cfg: ExperimentConfig, records: Sequence[PatientRecord], signature: GeneSignature,
                   out_dir: str | Path | None = None) -> tuple[list[FoldResult], list[FoldReport]]:
    """Train and test every fold. Writes checkpoints and CSVs when ``out_dir`` is given."""
    bags = build_bags(records, signature, cfg)
    splits = kfold_split([r.patient_id for r in records], cfg.k_folds, cfg.seed)
    jobs = [(cfg, bags, f, tr, te) for f, (tr, te) in enumerate(splits)]
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            done = list(pool.map(_run_fold, jobs))
    else:
        done = [_run_fold(j) for j in jobs]
    results = [d[0] for d in done]
    reports = [d[1] for d in done]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for res in results:
            save_fold(res, out, cfg)
        write_folds_csv(out / "folds.csv", reports)
        write_summary_csv(out / "summary.csv", reports)
        (out / "config.txt").write_text(cfg.dumps())
    return results, reports


def evaluate_checkpoints(cfg: ExperimentConfig, records: Sequence[PatientRecord], signature: GeneSignature,
                         ckpt_dir: str | Path, out_dir: str | Path | None = None) -> list[FoldReport]:
    """Re-score each fold's held-out patients from saved checkpoints."""
    ckpt_dir = Path(ckpt_dir)
    paths = sorted(ckpt_dir.glob("fold*.ckpt"), key=lambda p: int(p.stem[4:]))
    if not paths:
        raise PathError(f"no fold checkpoints in {ckpt_dir}")
    reports = []
    for path in paths:
        model, meta = HiMT.load(path)
        # sampling must match what the fold was trained on
        sub = cfg.replace(seed=int(meta.get("seed", cfg.seed)),
                          levels=tuple(meta.get("levels", ",".join(cfg.levels)).split(",")),
                          per_level_k=int(meta.get("per_level_k", cfg.per_level_k)))
        bags = build_bags(records, signature, sub)
        test_ids = [i for i in meta.get("test_ids", "").split(",") if i]
        missing = [i for i in test_ids if i not in bags]
        if missing:
            raise ContractError(f"{path.name}: test patients not in dataset: {missing[:5]}")
        reports.append(evaluate(model, bags, test_ids, float(meta["horizon"]), int(meta["fold"])))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_folds_csv(out / "folds.csv", reports)
        write_summary_csv(out / "summary.csv", reports)
    return reports


def run_ablation(cfg: ExperimentConfig, records: Sequence[PatientRecord], signature: GeneSignature,
                 out_path: str | Path | None = None,
                 settings: Sequence[tuple[str, ...]] = ABLATION_SETTINGS) -> list[dict]:
    rows = []
    for levels in settings:
        sub = cfg.replace(levels=tuple(levels))
        bags = build_bags(records, signature, sub)
        _, reports = cross_validate(sub, records, signature)
        s = summarize(reports)
        rows.append({
            "setting": "+".join(levels),
            "mean_instances": float(np.mean([b.M for b in bags.values()])),
            "c_mean": s["c_index"][0], "c_std": s["c_index"][1],
            "auc_mean": s["auc"][0], "auc_std": s["auc"][1],
        })
        log.info("ablation %s: C=%.3f±%.3f", rows[-1]["setting"], *s["c_index"])
    if out_path is not None:
        cols = ["setting", "mean_instances", "c_mean", "c_std", "auc_mean", "auc_std"]
        with open(out_path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in rows:
                fh.write(",".join(r["setting"] if c == "setting" else repr(r[c]) for c in cols) + "\n")
    return rows
