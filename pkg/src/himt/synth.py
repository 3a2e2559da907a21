"""Synthetic multimodal survival cohorts with a planted linear risk.

Each patient gets a latent offset ``z`` added to every patch it owns; patches
themselves come from a small per-level Gaussian mixture. The true risk is
``w . mean(patches)`` and event times are exponential with rate
``base_rate * exp(risk)``, so larger risk means shorter survival.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from himt.bags import LEVELS, GeneSignature, PatchFeatureSet, PatientRecord
from himt.errors import ContractError
from himt.layers import stream


@dataclass
class SynthConfig:
    n_patients: int = 200
    levels: tuple[str, ...] = LEVELS
    rows_per_level: int = 64
    d_in: int = 16
    genes_per_category: tuple[int, ...] = (4, 4, 4, 4, 4, 4)
    censor_rate: float = 0.3
    risk_scale: float = 2.0     # std of the planted risk across patients
    n_components: int = 3       # mixture components per level
    patch_noise: float = 1.0
    base_rate: float = 1.0 / 30.0   # events per month at zero risk
    gene_signal: float = 0.0    # optional risk leak into category-0 genes


@dataclass
class SynthDataset:
    records: list[PatientRecord]
    signature: GeneSignature
    planted_risk: np.ndarray
    weights: np.ndarray = field(repr=False)


def synth_generate(cfg: SynthConfig, seed: int) -> SynthDataset:
    if not 0.0 <= cfg.censor_rate <= 1.0:
        raise ContractError(f"censor rate must lie in [0, 1], got {cfg.censor_rate}")
    if cfg.n_patients < 1:
        raise ContractError("need at least one patient")
    for mag in cfg.levels:
        if mag not in LEVELS:
            raise ContractError(f"unknown level {mag!r}")

    world = stream(seed, "synth", "world")
    d = cfg.d_in
    centers = {mag: world.normal(0.0, 1.0, size=(cfg.n_components, d)) for mag in cfg.levels}
    w = world.normal(size=d)
    w *= cfg.risk_scale / np.linalg.norm(w)   # z ~ N(0, I) so w.z has std risk_scale

    symbols, mapping = [], {}
    for cat, count in enumerate(cfg.genes_per_category):
        for j in range(count):
            sym = f"GENE{cat}_{j}"
            symbols.append(sym)
            mapping[sym] = cat
    signature = GeneSignature(mapping, n_categories=len(cfg.genes_per_category))

    records, risks = [], []
    width = len(str(cfg.n_patients - 1))
    for i in range(cfg.n_patients):
        rng = stream(seed, "synth", "patient", i)
        pid = f"P{i:0{width}d}"
        z = rng.normal(size=d)
        sets = []
        for mag in cfg.levels:
            comp = rng.integers(0, cfg.n_components, size=cfg.rows_per_level)
            x = centers[mag][comp] + z + rng.normal(0.0, cfg.patch_noise, size=(cfg.rows_per_level, d))
            sets.append(PatchFeatureSet(mag, x))
        mean_feat = np.concatenate([s.features for s in sets]).mean(axis=0)
        risk = float(w @ mean_feat)
        event_time = rng.exponential(1.0 / (cfg.base_rate * np.exp(risk)))
        censored = rng.random() < cfg.censor_rate
        cut = rng.random()
        t = event_time * cut if censored else event_time
        t = max(t, 1e-3)
        expr = rng.normal(size=len(symbols))
        if cfg.gene_signal:
            expr[: cfg.genes_per_category[0]] += cfg.gene_signal * risk / cfg.risk_scale
        genes = dict(zip(symbols, expr.tolist()))
        records.append(PatientRecord(pid, float(t), int(censored), tuple(sets), genes))
        risks.append(risk)
    return SynthDataset(records, signature, np.array(risks), w)


def planted_scores(records: list[PatientRecord], weights: np.ndarray) -> np.ndarray:
    """Baseline risk ``w . mean(all patches)`` recomputed from loaded records."""
    return np.array([weights @ np.concatenate([fs.features for fs in r.feature_sets]).mean(axis=0)
                     for r in records])
