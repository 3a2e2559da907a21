"""Patient records, file formats and multimodal bag assembly.

On-disk layout of a dataset directory::

    labels.csv            patient-id,surv_months,censor   (censor 1 = censored)
    signature.tsv         SYMBOL<TAB>category-index
    <pid>_<mag>.csv       one patch feature vector per line, no header
    <pid>_genes.csv       SYMBOL,value
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from himt.autodiff import Node, Parameter, concat_rows, const
from himt.errors import ContractError, FormatError, PathError, ShapeError
from himt.layers import linear, stream

log = logging.getLogger(__name__)

LEVELS = ("5x", "10x", "20x")
DEFAULT_N_CATEGORIES = 6


class UnknownGeneWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PatchFeatureSet:
    magnification: str
    features: np.ndarray

    def __post_init__(self):
        if self.magnification not in LEVELS:
            raise ContractError(f"unknown magnification {self.magnification!r}")
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ContractError(f"feature set {self.magnification} needs at least one row")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    surv_time: float
    censor: int
    feature_sets: tuple[PatchFeatureSet, ...]
    genes: dict[str, float] = field(default_factory=dict)
    missing_levels: tuple[str, ...] = ()
    dropped_genes: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.feature_sets:
            raise ContractError(f"patient {self.patient_id} has no feature sets")
        if not (np.isfinite(self.surv_time) and self.surv_time > 0):
            raise ContractError(f"patient {self.patient_id}: survival time must be positive")
        if self.censor not in (0, 1):
            raise ContractError(f"patient {self.patient_id}: censor flag must be 0 or 1")
        widths = {fs.features.shape[1] for fs in self.feature_sets}
        if len(widths) != 1:
            raise ContractError(f"patient {self.patient_id}: feature widths differ across levels {widths}")

    @property
    def d_in(self) -> int:
        return self.feature_sets[0].features.shape[1]

    def level(self, mag: str) -> PatchFeatureSet | None:
        for fs in self.feature_sets:
            if fs.magnification == mag:
                return fs
        return None


@dataclass(frozen=True)
class GeneSignature:
    mapping: dict[str, int]
    n_categories: int = DEFAULT_N_CATEGORIES

    def __post_init__(self):
        bad = {s: c for s, c in self.mapping.items() if not 0 <= c < self.n_categories}
        if bad:
            raise ContractError(f"category index out of range [0, {self.n_categories}): {bad}")


@dataclass
class MultimodalBag:
    """Assembled inputs for one patient.

    ``instances`` keeps the raw sampled rows (M x d_in) so the graph can be
    rebuilt each forward pass; ``h_bag`` is their projection when assembled
    through :func:`assemble_bag`.
    """

    patient_id: str
    instances: np.ndarray
    gene_sets: list[np.ndarray]
    surv_time: float
    censor: int
    level_counts: dict[str, int]
    h_bag: Node | None = None

    @property
    def M(self) -> int:
        return self.instances.shape[0]

    @property
    def N(self) -> int:
        return len(self.gene_sets)


# ---------------------------------------------------------------- parsing


def _read_matrix(path: Path) -> np.ndarray:
    rows, width = [], None
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} values, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no rows")
    return np.array(rows, dtype=np.float64)


def load_signature(path: str | Path, n_categories: int | None = None) -> GeneSignature:
    path = Path(path)
    if not path.exists():
        raise PathError(f"signature file not found: {path}")
    mapping: dict[str, int] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected SYMBOL<TAB>category")
            sym, cat = parts[0].strip(), parts[1].strip()
            if sym in mapping:
                raise FormatError(f"{path}:{lineno}: duplicate symbol {sym}")
            try:
                mapping[sym] = int(cat)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad category {cat!r}") from None
    if not mapping:
        raise FormatError(f"{path}: empty signature")
    n = n_categories if n_categories is not None else max(DEFAULT_N_CATEGORIES, max(mapping.values()) + 1)
    return GeneSignature(mapping, n)


def _read_genes(path: Path, signature: GeneSignature) -> tuple[dict[str, float], list[str]]:
    genes: dict[str, float] = {}
    dropped: list[str] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise FormatError(f"{path}:{lineno}: expected SYMBOL,value")
            sym = row[0].strip()
            try:
                val = float(row[1])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad value {row[1]!r}") from None
            if sym in genes:
                raise FormatError(f"{path}:{lineno}: duplicate gene {sym}")
            if sym not in signature.mapping:
                dropped.append(sym)
                continue
            genes[sym] = val
    return genes, dropped


def load_patient(
    data_dir: str | Path,
    patient_id: str,
    signature: GeneSignature,
    surv_time: float,
    censor: int,
    levels: Sequence[str] = LEVELS,
) -> PatientRecord:
    """Read ``<pid>_<mag>.csv`` for each level plus ``<pid>_genes.csv``.

    Absent level files are recorded in ``missing_levels``. Gene symbols not in
    the signature are dropped with an :class:`UnknownGeneWarning`.
    """
    data_dir = Path(data_dir)
    sets, missing = [], []
    for mag in levels:
        path = data_dir / f"{patient_id}_{mag}.csv"
        if path.exists():
            sets.append(PatchFeatureSet(mag, _read_matrix(path)))
        else:
            missing.append(mag)
    if not sets:
        raise PathError(f"no feature files for patient {patient_id} in {data_dir}")
    gpath = data_dir / f"{patient_id}_genes.csv"
    if not gpath.exists():
        raise PathError(f"gene file not found: {gpath}")
    genes, dropped = _read_genes(gpath, signature)
    if dropped:
        warnings.warn(f"patient {patient_id}: dropped {len(dropped)} unknown gene symbols {dropped[:5]}",
                      UnknownGeneWarning, stacklevel=2)
    return PatientRecord(patient_id, float(surv_time), int(censor), tuple(sets), genes,
                         tuple(missing), tuple(dropped))


def read_labels(path: str | Path) -> list[tuple[str, float, int]]:
    path = Path(path)
    if not path.exists():
        raise PathError(f"labels file not found: {path}")
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected patient-id,surv_months,censor")
            try:
                t, c = float(row[1]), int(row[2])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad label {row!r}") from None
            if c not in (0, 1):
                raise FormatError(f"{path}:{lineno}: censor must be 0 or 1")
            out.append((row[0].strip(), t, c))
    return out


def load_dataset(data_dir: str | Path, levels: Sequence[str] = LEVELS) -> tuple[list[PatientRecord], GeneSignature]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise PathError(f"data directory not found: {data_dir}")
    signature = load_signature(data_dir / "signature.tsv")
    records = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UnknownGeneWarning)
        for pid, t, c in read_labels(data_dir / "labels.csv"):
            records.append(load_patient(data_dir, pid, signature, t, c, levels))
    for w in caught:
        log.warning("%s", w.message)
    return records, signature


# ---------------------------------------------------------------- writing


def _fmt(x: float) -> str:
    return repr(float(x))


def write_matrix(path: Path, a: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in a:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_dataset(out_dir: str | Path, records: Sequence[PatientRecord], signature: GeneSignature) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "signature.tsv", "w") as fh:
        for sym, cat in signature.mapping.items():
            fh.write(f"{sym}\t{cat}\n")
    with open(out_dir / "labels.csv", "w") as fh:
        for r in records:
            fh.write(f"{r.patient_id},{_fmt(r.surv_time)},{r.censor}\n")
    for r in records:
        for fs in r.feature_sets:
            write_matrix(out_dir / f"{r.patient_id}_{fs.magnification}.csv", fs.features)
        with open(out_dir / f"{r.patient_id}_genes.csv", "w") as fh:
            for sym, val in r.genes.items():
                fh.write(f"{sym},{_fmt(val)}\n")


# ---------------------------------------------------------------- bags


def subsample_level(fs: PatchFeatureSet, k: int, rng: np.random.Generator | int) -> PatchFeatureSet:
    """Keep ``k`` distinct rows drawn uniformly without replacement (all rows if fewer)."""
    if k < 1:
        raise ContractError(f"subsample size must be >= 1, got {k}")
    if fs.n_rows <= k:
        return fs
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    idx = rng.choice(fs.n_rows, size=k, replace=False)
    return PatchFeatureSet(fs.magnification, fs.features[idx])


def sample_instances(
    record: PatientRecord,
    per_level_k: int,
    seed: int,
    levels: Sequence[str] | None = None,
) -> tuple[np.ndarray, dict[str, int]]:
    """Subsample every enabled level and stack level-major.

    Each (patient, level) pair draws from its own stream, so enabling or
    disabling a level never changes what another level samples.
    """
    chosen = [fs for fs in record.feature_sets if levels is None or fs.magnification in levels]
    if not chosen:
        raise ContractError(f"patient {record.patient_id} has none of the levels {levels}")
    order = {m: i for i, m in enumerate(LEVELS)}
    chosen.sort(key=lambda fs: order[fs.magnification])
    blocks, counts = [], {}
    for fs in chosen:
        sub = subsample_level(fs, per_level_k, stream(seed, "sampling", record.patient_id, fs.magnification))
        blocks.append(sub.features)
        counts[fs.magnification] = sub.n_rows
    return np.concatenate(blocks, axis=0), counts


def group_genes(expression: dict[str, float], signature: GeneSignature) -> list[np.ndarray]:
    """Split expression values into one vector per functional category, in file order."""
    if not signature.mapping:
        raise ContractError("empty gene signature")
    buckets: list[list[float]] = [[] for _ in range(signature.n_categories)]
    for sym, val in expression.items():
        cat = signature.mapping.get(sym)
        if cat is not None:
            buckets[cat].append(val)
    return [np.array(b, dtype=np.float64) for b in buckets]


def embed_gene_sets(gene_sets: Sequence[np.ndarray], weights: Sequence[Parameter],
                    biases: Sequence[Parameter]) -> Node:
    """One affine layer per gene set; rows stacked into an N x d_k matrix."""
    if len(weights) != len(gene_sets) or len(biases) != len(gene_sets):
        raise ShapeError(f"{len(gene_sets)} gene sets but {len(weights)} FC layers")
    rows = []
    for n, (g, w, b) in enumerate(zip(gene_sets, weights, biases)):
        if w.shape[0] != len(g):
            raise ShapeError(f"gene set {n}: FC expects {w.shape[0]} inputs, set has {len(g)}")
        rows.append(b if len(g) == 0 else linear(const(g.reshape(1, -1)), w, b))
    return concat_rows(rows)


def assemble_bag(
    record: PatientRecord,
    per_level_k: int,
    projection: Parameter,
    seed: int,
    signature: GeneSignature | None = None,
    levels: Sequence[str] | None = None,
) -> MultimodalBag:
    """Sample, stack and project one patient's instances into a bag."""
    if not record.feature_sets:
        raise ContractError("empty record")
    instances, counts = sample_instances(record, per_level_k, seed, levels)
    if projection.shape[0] != instances.shape[1]:
        raise ShapeError(f"projection expects d_in={projection.shape[0]}, features have {instances.shape[1]}")
    if signature is not None:
        gene_sets = group_genes(record.genes, signature)
    else:
        gene_sets = [np.array(list(record.genes.values()))]
    bag = MultimodalBag(record.patient_id, instances, gene_sets, record.surv_time, record.censor, counts)
    bag.h_bag = linear(const(instances), projection)
    return bag
