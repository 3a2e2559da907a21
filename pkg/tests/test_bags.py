import filecmp

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from himt.autodiff import Parameter
from himt.bags import (GeneSignature, PatchFeatureSet, PatientRecord, UnknownGeneWarning, assemble_bag,
                       embed_gene_sets, group_genes, load_dataset, load_patient, subsample_level,
                       write_dataset, write_matrix)
from himt.errors import ContractError, FormatError, ShapeError
from himt.metrics import RiskTable, c_index
from himt.synth import SynthConfig, planted_scores, synth_generate


def _sig(n=6):
    return GeneSignature({f"G{i}": i for i in range(n)}, 6)


def _record(level_rows, d=4, seed=0):
    rng = np.random.default_rng(seed)
    sets = tuple(PatchFeatureSet(mag, rng.normal(size=(n, d))) for mag, n in level_rows.items())
    return PatientRecord("p", 10.0, 0, sets, {f"G{i}": float(i) for i in range(6)})


# ---------------------------------------------------------------- loading


def test_load_patient_three_levels(tmp_path, rng):
    for mag in ("5x", "10x", "20x"):
        write_matrix(tmp_path / f"A_{mag}.csv", rng.normal(size=(10, 8)))
    (tmp_path / "A_genes.csv").write_text("G0,1.5\nG3,-2\n")
    rec = load_patient(tmp_path, "A", _sig(), 20.0, 1)
    assert [fs.features.shape for fs in rec.feature_sets] == [(10, 8)] * 3
    assert rec.genes == {"G0": 1.5, "G3": -2.0}
    assert rec.censor == 1 and rec.missing_levels == ()


def test_missing_level_recorded(tmp_path, rng):
    write_matrix(tmp_path / "A_20x.csv", rng.normal(size=(3, 2)))
    (tmp_path / "A_genes.csv").write_text("G0,1\n")
    rec = load_patient(tmp_path, "A", _sig(), 5.0, 0)
    assert rec.missing_levels == ("5x", "10x")


def test_unknown_gene_dropped_with_warning(tmp_path, rng):
    write_matrix(tmp_path / "A_20x.csv", rng.normal(size=(3, 2)))
    (tmp_path / "A_genes.csv").write_text("G0,1\nBOGUS,3\nG1,2\n")
    with pytest.warns(UnknownGeneWarning, match="BOGUS"):
        rec = load_patient(tmp_path, "A", _sig(), 5.0, 0)
    assert list(rec.genes) == ["G0", "G1"]
    assert rec.dropped_genes == ("BOGUS",)


def test_duplicate_rows_kept(tmp_path):
    (tmp_path / "A_20x.csv").write_text("1,2\n1,2\n3,4\n")
    (tmp_path / "A_genes.csv").write_text("G0,1\n")
    rec = load_patient(tmp_path, "A", _sig(), 5.0, 0)
    assert rec.feature_sets[0].features.tolist() == [[1, 2], [1, 2], [3, 4]]


def test_malformed_row_reports_line(tmp_path):
    (tmp_path / "A_20x.csv").write_text("1,2,3\n4,5,6\n7,8\n")
    (tmp_path / "A_genes.csv").write_text("G0,1\n")
    with pytest.raises(FormatError, match=r"A_20x.csv:3"):
        load_patient(tmp_path, "A", _sig(), 5.0, 0)


# ---------------------------------------------------------------- subsampling


def test_subsample_population_equal_k():
    fs = PatchFeatureSet("5x", np.arange(20.0).reshape(10, 2))
    out = subsample_level(fs, 10, 0)
    assert sorted(map(tuple, out.features)) == sorted(map(tuple, fs.features))


def test_subsample_undersized_level():
    fs = PatchFeatureSet("5x", np.ones((5, 3)))
    assert subsample_level(fs, 1000, 0).n_rows == 5


def test_subsample_replay_and_distinct():
    fs = PatchFeatureSet("20x", np.arange(2000.0).reshape(2000, 1))
    a = subsample_level(fs, 1000, 42).features.ravel()
    b = subsample_level(fs, 1000, 42).features.ravel()
    np.testing.assert_array_equal(a, b)
    assert len(np.unique(a)) == 1000


def test_subsample_seeds_differ():
    fs = PatchFeatureSet("20x", np.arange(2000.0).reshape(2000, 1))
    for s in range(5):
        a = set(subsample_level(fs, 1000, 2 * s).features.ravel())
        b = set(subsample_level(fs, 1000, 2 * s + 1).features.ravel())
        assert a != b


def test_subsample_k_zero():
    with pytest.raises(ContractError):
        subsample_level(PatchFeatureSet("5x", np.ones((3, 2))), 0, 0)


# ---------------------------------------------------------------- assembly


def test_three_levels_give_3000_instances():
    rec = _record({"5x": 1000, "10x": 1000, "20x": 1000}, d=3)
    bag = assemble_bag(rec, 1000, Parameter(np.eye(3)), seed=0, signature=_sig())
    assert bag.M == 3000 and bag.h_bag.shape == (3000, 3)


def test_single_level_gives_1000_instances():
    rec = _record({"20x": 1000}, d=3)
    assert assemble_bag(rec, 1000, Parameter(np.eye(3)), seed=0).M == 1000


def test_identity_projection_single_row():
    rec = _record({"10x": 1}, d=5)
    bag = assemble_bag(rec, 1000, Parameter(np.eye(5)), seed=0)
    np.testing.assert_array_equal(bag.h_bag.value, rec.feature_sets[0].features)


def test_level_major_order():
    rec = _record({"20x": 3, "5x": 2}, d=2)
    bag = assemble_bag(rec, 10, Parameter(np.eye(2)), seed=0)
    assert list(bag.level_counts) == ["5x", "20x"]
    np.testing.assert_array_equal(bag.instances[:2], rec.level("5x").features)


def test_projection_shape_mismatch():
    with pytest.raises(ShapeError):
        assemble_bag(_record({"5x": 3}, d=4), 10, Parameter(np.eye(3)), seed=0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 60), min_size=1, max_size=3), st.integers(1, 50))
def test_bag_size_arithmetic(rows, k):
    levels = dict(zip(("5x", "10x", "20x"), rows))
    bag = assemble_bag(_record(levels, d=2), k, Parameter(np.eye(2)), seed=3)
    assert bag.M == sum(min(k, n) for n in rows)


# ---------------------------------------------------------------- genes


def test_group_genes_bijection():
    sets = group_genes({f"G{i}": float(i) for i in range(6)}, _sig())
    assert [s.tolist() for s in sets] == [[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]]


def test_group_genes_degenerate():
    sig = GeneSignature({f"G{i}": 0 for i in range(4)}, 6)
    sets = group_genes({f"G{i}": float(i) for i in range(4)}, sig)
    assert sets[0].tolist() == [0, 1, 2, 3] and all(len(s) == 0 for s in sets[1:])


def test_group_genes_counting_oracle(rng):
    symbols = [f"S{i}" for i in range(1000)]
    mapping = {s: int(rng.integers(0, 6)) for s in symbols if rng.random() < 0.7}
    expr = dict(zip(symbols, rng.normal(size=1000)))
    sets = group_genes(expr, GeneSignature(mapping, 6))
    assert sum(len(s) for s in sets) == len(mapping)
    for n in range(6):
        assert sets[n].tolist() == [expr[s] for s in symbols if mapping.get(s) == n]


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text("ABC", min_size=1, max_size=4), st.floats(-5, 5), max_size=20),
       st.randoms(use_true_random=False))
def test_group_genes_multiset(expr, rnd):
    mapping = {s: rnd.randrange(6) for s in expr if rnd.random() < 0.8}
    if not mapping:
        mapping = {"ZZZ": 0}
    sets = group_genes(expr, GeneSignature(mapping, 6))
    flat = sorted(v for s in sets for v in s.tolist())
    assert flat == sorted(v for k, v in expr.items() if k in mapping)


def test_embed_zero_weights():
    sets = [np.ones(2), np.ones(3), np.array([])]
    ws = [Parameter(np.zeros((len(s), 4))) for s in sets]
    bs = [Parameter(np.zeros((1, 4))) for _ in sets]
    assert not embed_gene_sets(sets, ws, bs).value.any()


def test_embed_shape_six_by_256(rng):
    sets = [rng.normal(size=n) for n in (3, 5, 2, 7, 1, 4)]
    ws = [Parameter(rng.normal(size=(len(s), 256))) for s in sets]
    bs = [Parameter(np.zeros((1, 256))) for _ in sets]
    assert embed_gene_sets(sets, ws, bs).shape == (6, 256)


def test_embed_single_gene_linear():
    b = np.arange(5.0).reshape(1, 5)
    out = embed_gene_sets([np.array([2.5])], [Parameter(np.ones((1, 5)))], [Parameter(b)])
    np.testing.assert_array_equal(out.value, 2.5 + b)


def test_embed_empty_set_is_bias():
    b = np.array([[1.0, -1.0]])
    out = embed_gene_sets([np.array([])], [Parameter(np.zeros((0, 2)))], [Parameter(b)])
    np.testing.assert_array_equal(out.value, b)


def test_embed_shape_mismatch():
    with pytest.raises(ShapeError):
        embed_gene_sets([np.ones(3)], [Parameter(np.ones((2, 4)))], [Parameter(np.zeros((1, 4)))])


# ---------------------------------------------------------------- synthetic


def test_synth_censor_rate_zero():
    ds = synth_generate(SynthConfig(n_patients=30, censor_rate=0.0, rows_per_level=4), 1)
    assert all(r.censor == 0 for r in ds.records)


def test_synth_censor_rate_validated():
    with pytest.raises(ContractError):
        synth_generate(SynthConfig(censor_rate=1.5), 0)


def test_synth_files_byte_identical(tmp_path):
    cfg = SynthConfig(n_patients=12, rows_per_level=5)
    for d in ("a", "b"):
        ds = synth_generate(cfg, 99)
        write_dataset(tmp_path / d, ds.records, ds.signature)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(names) == 2 + 12 * 4
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert not mismatch and not errors


def test_synth_roundtrip(tmp_path):
    ds = synth_generate(SynthConfig(n_patients=5, rows_per_level=3), 2)
    write_dataset(tmp_path, ds.records, ds.signature)
    records, sig = load_dataset(tmp_path)
    assert sig == ds.signature
    for a, b in zip(records, ds.records):
        assert a.patient_id == b.patient_id and a.surv_time == b.surv_time and a.censor == b.censor
        for fa, fb in zip(a.feature_sets, b.feature_sets):
            np.testing.assert_array_equal(fa.features, fb.features)
    np.testing.assert_array_equal(planted_scores(records, ds.weights), ds.planted_risk)


def test_synth_risk_rank_correlation():
    ds = synth_generate(SynthConfig(n_patients=200, rows_per_level=16), 5)
    rho = spearmanr(ds.planted_risk, [r.surv_time for r in ds.records]).statistic
    assert rho < 0 and abs(rho) > 0.4


def test_synth_planted_baseline_cindex():
    ds = synth_generate(SynthConfig(n_patients=200, rows_per_level=16), 5)
    unc = [i for i, r in enumerate(ds.records) if r.censor == 0]
    table = RiskTable.build([str(i) for i in unc], ds.planted_risk[unc],
                            [ds.records[i].surv_time for i in unc], np.ones(len(unc)))
    assert c_index(table)[0] > 0.8
