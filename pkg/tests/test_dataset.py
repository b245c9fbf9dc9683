import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatesband.dataset import (
    ColumnMap,
    DatasetError,
    EvaluationDataset,
    UnitRecord,
    load_csv,
    sort_by_score,
)


def make(n=10, seed=0, score=None, d=2):
    rng = np.random.default_rng(seed)
    t = np.zeros(n, dtype=int)
    t[rng.permutation(n)[: n // 2]] = 1
    return EvaluationDataset(
        ids=tuple(f"u{i}" for i in range(n)),
        outcome=rng.normal(size=n),
        treatment=t,
        score=rng.normal(size=n) if score is None else np.asarray(score, float),
        covariates=rng.normal(size=(n, d)),
        tie_seed=seed,
    )


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_csv_roundtrip(tmp_path):
    ds = make(12, seed=3)
    path = str(tmp_path / "rt.csv")
    cols = ds.to_csv(path)
    back = load_csv(path, cols, tie_seed=3)
    assert back.equals(ds)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=4, max_size=30))
def test_roundtrip_preserves_floats_exactly(values):
    n = len(values)
    t = np.array([1, 0] * (n // 2) + [1] * (n % 2))
    ds = EvaluationDataset(
        ids=tuple(str(i + 1) for i in range(n)),
        outcome=np.array(values),
        treatment=t,
        score=np.array(values[::-1]),
        covariates=np.zeros((n, 0)),
    )
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "x.csv")
        back = load_csv(path, ds.to_csv(path))
    assert back.equals(ds)


def test_default_ids_number_rows(tmp_path):
    path = write(tmp_path, "outcome,treatment,score\n1,1,0.5\n2,0,0.1\n3,1,0.3\n4,0,0.2\n")
    ds = load_csv(path)
    assert ds.ids == ("1", "2", "3", "4")
    assert (ds.n, ds.n1, ds.n0, ds.d) == (4, 2, 2, 0)


def test_column_mapping(tmp_path):
    path = write(tmp_path, "y,w,s,age,pid\n1,1,0.5,40,a\n2,0,0.1,50,b\n3,1,0.3,60,c\n4,0,0.2,70,d\n")
    ds = load_csv(path, {"outcome": "y", "treatment": "w", "score": "s",
                         "covariates": "age", "id": "pid"})
    assert ds.ids == ("a", "b", "c", "d")
    assert ds.covariate_names == ("age",)
    np.testing.assert_array_equal(ds.covariates[:, 0], [40, 50, 60, 70])


@pytest.mark.parametrize(
    "body, fragment",
    [
        ("outcome,treatment\n1,1\n", "missing column 'score'"),
        ("outcome,treatment,score\n1,1,0\n2,2,0\n3,0,1\n4,0,1\n", ":3: column 'treatment': non-binary"),
        ("outcome,treatment,score\n1,1,0\n,0,0\n3,0,1\n4,1,1\n", ":3: missing value in column 'outcome'"),
        ("outcome,treatment,score\n1,1,0\n2,0,abc\n", ":3: column 'score': cannot parse"),
        ("outcome,treatment,score\n1,1,0\n2,0,inf\n", "non-finite"),
        ("outcome,treatment,score\n1,1,0\n2,0\n", ":3: expected 3 fields"),
        ("outcome,treatment,score\n1,1,0\n2,0,1\n3,0,2\n", "at least 2 treated"),
        ("", "empty file"),
    ],
)
def test_load_errors_carry_context(tmp_path, body, fragment):
    path = write(tmp_path, body)
    with pytest.raises(DatasetError) as exc:
        load_csv(path)
    assert fragment in str(exc.value)
    assert path in str(exc.value)


def test_duplicate_ids_rejected():
    with pytest.raises(DatasetError, match="unique"):
        EvaluationDataset(("a", "a", "b", "c"), [1, 2, 3, 4], [1, 1, 0, 0], [0, 0, 0, 0], np.zeros((4, 0)))


def test_from_records_and_units():
    recs = [UnitRecord(str(i), float(i), i % 2, float(-i), (float(i),)) for i in range(6)]
    ds = EvaluationDataset.from_records(recs, covariate_names=["z"])
    assert list(ds.units()) == recs


def test_arrays_are_read_only():
    ds = make()
    with pytest.raises(ValueError):
        ds.outcome[0] = 1.0


def test_sort_descending_without_ties():
    ds = make(20, seed=1)
    s = sort_by_score(ds)
    assert not s.jitter_applied
    assert np.all(np.diff(s.effective_score) < 0)
    assert s.ids[0] == ds.ids[int(np.argmax(ds.score))]


def test_only_tied_units_are_jittered():
    score = [3.0, 1.0, 1.0, 2.0, 1.0, 0.0]
    ds = make(6, seed=4, score=score)
    s = sort_by_score(ds)
    assert s.jitter_applied
    eff = dict(zip(s.order.tolist(), s.effective_score.tolist()))
    for i in (0, 3, 5):
        assert eff[i] == score[i]
    assert sorted(s.order[:2].tolist()) == [0, 3]
    assert sorted(s.order[2:5].tolist()) == [1, 2, 4]
    assert s.order[5] == 5


def test_tie_break_is_seeded():
    score = np.zeros(40)
    orders = {tuple(sort_by_score(make(40, seed=k, score=score)).order) for k in range(5)}
    assert len(orders) > 1
    again = sort_by_score(make(40, seed=2, score=score)).order
    assert np.array_equal(again, sort_by_score(make(40, seed=2, score=score)).order)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=4, max_size=40), st.integers(0, 2**31 - 1))
def test_sort_is_a_permutation_consistent_with_scores(raw, seed):
    n = len(raw) - len(raw) % 2
    score = np.array(raw[:n], float)
    ds = make(n, seed=seed % 1000, score=score)
    s = sort_by_score(ds)
    assert sorted(s.order.tolist()) == list(range(n))
    assert np.all(np.diff(score[s.order]) <= 0)
    assert np.all(np.diff(s.effective_score) <= 0)


def test_column_map_from_mapping_defaults():
    assert ColumnMap.from_mapping({}) == ColumnMap()
