import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matwheel.data import (
    JARVIS2D_EXFOLIATION,
    CrystalStructure,
    DatasetHandle,
    DatasetMeta,
    PropertyRecord,
    composition,
    merge_datasets,
    parse_structure_record,
    read_jsonl,
    serialize_record,
    split_dataset,
    subsample_labeled,
    validate_structure,
    wrap_coords,
    write_jsonl,
)
from matwheel.exceptions import EmptyDataset, InvalidLattice, MalformedRecord, TooManyAtoms


def record_line(**overrides):
    obj = {
        "id": "a",
        "lattice": [[4, 0, 0], [0, 4, 0], [0, 0, 4]],
        "species": [11, 17],
        "frac_coords": [[0, 0, 0], [0.5, 0.5, 0.5]],
        "property": 1.5,
    }
    obj.update(overrides)
    return json.dumps({k: v for k, v in obj.items() if v is not None})


def make_records(n, kind="real"):
    s = CrystalStructure(np.eye(3) * 4, [1], [[0, 0, 0]])
    return [PropertyRecord(CrystalStructure(s.lattice, s.species, s.frac_coords, f"{kind}-{i}"), float(i), kind)
            for i in range(n)]


class TestParse:
    def test_minimal_record(self):
        rec = parse_structure_record(record_line())
        assert rec.structure.n_atoms == 2
        assert rec.property == 1.5
        assert rec.label_kind == "real"

    def test_missing_lattice(self):
        with pytest.raises(MalformedRecord, match="lattice"):
            parse_structure_record(record_line(lattice=None))

    def test_upper_end_of_exfoliation_range(self):
        rec = parse_structure_record(record_line(property=1604.04))
        validate_structure(rec.structure, JARVIS2D_EXFOLIATION)
        assert rec.property == 1604.04

    @pytest.mark.parametrize("bad", [
        {"species": [0, 1]},
        {"species": [119, 1]},
        {"species": [], "frac_coords": []},
        {"species": ["Na", 1]},
        {"property": "x"},
        {"frac_coords": [[0, 0], [0, 0, 0]]},
        {"lattice": [[1, 0, 0], [0, 1, 0]]},
        {"label_kind": "fake"},
    ])
    def test_malformed(self, bad):
        with pytest.raises(MalformedRecord):
            parse_structure_record(record_line(**bad))

    def test_invalid_json(self):
        with pytest.raises(MalformedRecord):
            parse_structure_record("{not json")

    def test_coordinates_wrapped(self):
        rec = parse_structure_record(record_line(frac_coords=[[1.25, -0.1, 0.0], [2.0, 0.5, 0.5]]))
        np.testing.assert_allclose(rec.structure.frac_coords[0], [0.25, 0.9, 0.0])
        assert rec.structure.frac_coords[1, 0] == 0.0

    def test_label_kind_read(self):
        assert parse_structure_record(record_line(label_kind="synthetic")).label_kind == "synthetic"

    def test_round_trip(self):
        rec = parse_structure_record(record_line(frac_coords=[[0.1, 0.2, 0.3], [0.7, 0.8, 0.9]]))
        again = parse_structure_record(serialize_record(rec))
        assert again.structure == rec.structure
        assert again.property == rec.property


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(1, 6),
    coords=st.lists(st.floats(-5, 5, allow_nan=False), min_size=18, max_size=18),
    prop=st.floats(-1e6, 1e6, allow_nan=False),
)
def test_parse_serialize_round_trip(n, coords, prop):
    line = record_line(species=[3] * n, frac_coords=[coords[3 * i:3 * i + 3] for i in range(n)], property=prop)
    rec = parse_structure_record(line)
    again = parse_structure_record(serialize_record(rec))
    np.testing.assert_allclose(again.structure.frac_coords, rec.structure.frac_coords, atol=1e-12)
    assert again.property == rec.property
    assert again.label_kind == rec.label_kind
    assert np.all(again.structure.frac_coords < 1.0) and np.all(again.structure.frac_coords >= 0.0)


class TestValidate:
    def test_single_atom_ok(self):
        validate_structure(CrystalStructure(np.eye(3) * 5, [1], [[0, 0, 0]]), JARVIS2D_EXFOLIATION)

    def test_negative_determinant(self):
        lattice = np.diag([5.0, 5.0, -5.0])
        with pytest.raises(InvalidLattice):
            validate_structure(CrystalStructure(lattice, [1], [[0, 0, 0]]))

    def test_non_finite_lattice(self):
        lattice = np.eye(3)
        lattice[0, 0] = np.nan
        with pytest.raises(InvalidLattice):
            validate_structure(CrystalStructure(lattice, [1], [[0, 0, 0]]))

    def test_too_many_atoms(self):
        s = CrystalStructure(np.eye(3) * 10, [6] * 36, np.random.default_rng(0).random((36, 3)))
        with pytest.raises(TooManyAtoms):
            validate_structure(s, JARVIS2D_EXFOLIATION)

    def test_meta_invariants(self):
        with pytest.raises(ValueError):
            DatasetMeta("x", 5, (2.0, 1.0))
        with pytest.raises(ValueError):
            DatasetMeta("x", 0, (1.0, 2.0))


class TestWrap:
    @pytest.mark.parametrize("value, expected", [(1.25, 0.25), (-0.1, 0.9), (0.0, 0.0)])
    def test_examples(self, value, expected):
        s = wrap_coords(CrystalStructure(np.eye(3), [1], [[value, 0, 0]]))
        assert s.frac_coords[0, 0] == pytest.approx(expected, abs=1e-15)

    def test_tiny_negative_stays_below_one(self):
        s = wrap_coords(CrystalStructure(np.eye(3), [1], [[-1e-18, 0, 0]]))
        assert 0.0 <= s.frac_coords[0, 0] < 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=3, max_size=3))
    def test_idempotent(self, xyz):
        s = CrystalStructure(np.eye(3), [1], [xyz])
        once = wrap_coords(s)
        assert np.array_equal(wrap_coords(once).frac_coords, once.frac_coords)
        assert np.all((once.frac_coords >= 0) & (once.frac_coords < 1))


class TestSplit:
    @pytest.mark.parametrize("n, sizes", [(636, (445, 95, 96)), (1056, (739, 158, 159))])
    def test_dataset_sizes(self, n, sizes):
        assert split_dataset(make_records(n), seed=3).sizes() == sizes

    def test_deterministic(self):
        recs = make_records(50)
        assert split_dataset(recs, seed=7) == split_dataset(recs, seed=7)
        assert split_dataset(recs, seed=7) != split_dataset(recs, seed=8)

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            split_dataset([], seed=0)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 5000), seed=st.integers(0, 2**32 - 1))
    def test_partition_property(self, n, seed):
        recs = make_records(n)
        sp = split_dataset(recs, seed=seed)
        train, val, test = set(sp.train_ids), set(sp.val_ids), set(sp.test_ids)
        assert not (train & val or train & test or val & test)
        assert train | val | test == {r.id for r in recs}
        # integer-arithmetic oracle for the floor rule
        assert len(train) == 70 * n // 100
        assert len(val) == 15 * n // 100
        assert len(test) == n - 70 * n // 100 - 15 * n // 100


class TestSubsample:
    def test_ten_percent_of_jarvis_train(self):
        part = subsample_labeled([f"id{i}" for i in range(445)], 0.10, seed=1)
        assert (len(part.labeled_ids), len(part.unlabeled_ids)) == (44, 401)

    def test_full_fraction(self):
        ids = [f"id{i}" for i in range(20)]
        part = subsample_labeled(ids, 1.0, seed=1)
        assert set(part.labeled_ids) == set(ids) and part.unlabeled_ids == ()

    def test_at_least_one(self):
        assert len(subsample_labeled(["a", "b", "c"], 0.1, seed=0).labeled_ids) == 1

    def test_deterministic_and_disjoint(self):
        ids = [f"id{i}" for i in range(100)]
        a, b = subsample_labeled(ids, 0.3, 5), subsample_labeled(ids, 0.3, 5)
        assert a == b
        assert not set(a.labeled_ids) & set(a.unlabeled_ids)
        assert set(a.labeled_ids) | set(a.unlabeled_ids) == set(ids)


class TestMerge:
    def test_real_plus_synthetic(self):
        out = merge_datasets(make_records(445), make_records(1000, "synthetic"))
        assert len(out) == 1445
        assert composition(out) == {"real": 445, "pseudo": 0, "synthetic": 1000}

    def test_identities(self):
        a = make_records(3)
        assert merge_datasets(a, []) == a
        assert merge_datasets([], []) == []


def test_jsonl_io(tmp_path, toy):
    records, meta = toy
    path = tmp_path / "d.jsonl"
    write_jsonl(records[:20], path)
    back, rejected = read_jsonl(path, meta)
    assert rejected == []
    assert [r.structure for r in back] == [r.structure for r in records[:20]]
    assert path.read_bytes().count(b"\r") == 0


def test_read_jsonl_lenient_collects_rejections(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(record_line() + "\n" + record_line(lattice=None) + "\n", encoding="utf-8")
    records, rejected = read_jsonl(path, strict=False)
    assert len(records) == 1 and rejected[0][0] == 2
    with pytest.raises(MalformedRecord):
        read_jsonl(path, strict=True)


def test_handle_logs_label_reads():
    h = DatasetHandle(make_records(5))
    h.structures(["real-0"])
    assert h.access_log == []
    h.labels(["real-1"], "train")
    assert h.label_readers(["real-1"]) == {"train"}
    assert h.label_readers(["real-0"]) == set()
