from __future__ import annotations

import math
import random
from datetime import datetime, timedelta

import numpy as np
import pytest

from insightminer.tabular import (
    Column,
    ColumnKind,
    DataError,
    Dataset,
    column_stats,
    format_timedelta,
    load_csv,
    normalized_entropy,
    parse_timedelta,
    pearson_matrix,
)

EXAM_CSV = (
    "Student,Exam Date,Score,Course Duration\n"
    "S1,2020-09-01,88,1 year\n"
    "S2,2019-08-15,92,3 months\n"
    "S3,2021-01-10,75,6 months\n"
    "S4,2018-05-20,85,1 year\n"
)


# ---------------------------------------------------------------------------
# Reference implementations, kept deliberately independent of the package.
# ---------------------------------------------------------------------------

def ref_quant_stats(xs):
    n = len(xs)
    mean = sum(xs) / n
    m2 = sum((x - mean) ** 2 for x in xs) / n
    m3 = sum((x - mean) ** 3 for x in xs) / n
    m4 = sum((x - mean) ** 4 for x in xs) / n
    skew = m3 / m2 ** 1.5 if m2 > 0 else 0.0
    kurt = m4 / m2 ** 2 - 3.0 if m2 > 0 else 0.0
    q1, q3 = np.quantile(np.asarray(xs, dtype=float), [0.25, 0.75])
    iqr = float(q3 - q1)
    ratio = 0.0 if iqr == 0 else (math.inf if mean == 0 else abs(iqr / mean))
    return skew, kurt, ratio


def ref_pearson(xs, ys):
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / n
    vx = sum((x - mx) ** 2 for x in xs) / n
    vy = sum((y - my) ** 2 for y in ys) / n
    return cov / math.sqrt(vx * vy)


def ref_entropy_bits(freqs):
    return -sum(f * math.log2(f) for f in freqs if f > 0)


# ---------------------------------------------------------------------------
# CSV loading and type inference
# ---------------------------------------------------------------------------

def test_load_exam_table(tmp_path):
    p = tmp_path / "exams.csv"
    p.write_text(EXAM_CSV)
    d = load_csv(str(p))
    assert d.n_rows == 4
    kinds = {c.name: c.kind for c in d.columns}
    assert kinds == {
        "Student": ColumnKind.CATEGORICAL,
        "Exam Date": ColumnKind.DATETIME,
        "Score": ColumnKind.NUMERICAL,
        "Course Duration": ColumnKind.TIMEDELTA,
    }
    assert d.column("Course Duration").values[2] == timedelta(days=180)
    assert all(c.origin == "original" for c in d.columns)
    assert len(d.lineage) == 1 and d.lineage[0].startswith("load(")


def test_load_header_only(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("a,b\n")
    d = load_csv(str(p))
    assert d.n_rows == 0
    assert d.names == ("a", "b")


def test_mixed_cells_fall_back_to_categorical(tmp_path):
    p = tmp_path / "mixed.csv"
    p.write_text("c\n1\n2\nx\n")
    d = load_csv(str(p))
    assert d.column("c").kind == ColumnKind.CATEGORICAL
    assert d.column("c").values == ("1", "2", "x")


def test_boolean_and_null_inference(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("flag,n\ntrue,1\n,\nfalse,2.5\n")
    d = load_csv(str(p))
    assert d.column("flag").kind == ColumnKind.BOOLEAN
    assert d.column("flag").values == (True, None, False)
    assert d.column("n").kind == ColumnKind.NUMERICAL
    assert d.column("n").values == (1.0, None, 2.5)


def test_schema_overrides_and_errors(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("a,b\n1,01/02/2020\n2,03/04/2021\n")
    d = load_csv(str(p), schema={"a": "categorical", "b": {"type": "datetime", "format": "%d/%m/%Y"}})
    assert d.column("a").kind == ColumnKind.CATEGORICAL
    assert d.column("b").values[0] == datetime(2020, 2, 1)
    with pytest.raises(DataError, match="row 2, column 'a'"):
        load_csv(str(p), schema={"a": "datetime"})
    with pytest.raises(DataError):
        load_csv(str(p), schema={"zzz": "numerical"})
    with pytest.raises(DataError):
        load_csv(str(tmp_path / "missing.csv"))


def test_duration_literals():
    assert parse_timedelta("6 months") == timedelta(days=180)
    assert parse_timedelta("1 year") == timedelta(days=365)
    assert parse_timedelta("P6M") == timedelta(days=180)
    assert parse_timedelta("PT90S") == timedelta(seconds=90)
    assert format_timedelta(timedelta(days=180)) == "6 months"
    assert format_timedelta(timedelta(days=365)) == "1 year"
    assert format_timedelta(timedelta(seconds=90)) == "90 seconds"
    with pytest.raises(ValueError):
        parse_timedelta("sideways")


# ---------------------------------------------------------------------------
# Column statistics
# ---------------------------------------------------------------------------

def test_categorical_stats():
    c = Column("c", ColumnKind.CATEGORICAL, ("A", "A", "A", "B"))
    s = c.stats()
    assert s.mode_value == "A"
    assert s.mode_frequency == pytest.approx(0.75)
    assert s.unique_count == 2


def test_symmetric_numeric_skew_is_zero():
    c = Column("c", ColumnKind.NUMERICAL, (1.0, 2.0, 3.0, 4.0, 5.0))
    assert c.stats().skewness == pytest.approx(0.0, abs=1e-12)


def test_spike_column_population_skewness():
    # Population m3/m2^1.5 of [1,1,1,1,100]: two-point distribution with
    # p=1/5 gives (1-2p)/sqrt(p(1-p)) = 1.5 exactly.
    c = Column("c", ColumnKind.NUMERICAL, (1.0, 1.0, 1.0, 1.0, 100.0))
    expected = ref_quant_stats([1.0, 1.0, 1.0, 1.0, 100.0])[0]
    assert expected == pytest.approx(1.5, abs=1e-12)
    assert c.stats().skewness == pytest.approx(expected, abs=1e-12)


def test_all_null_column_raises():
    c = Column("c", ColumnKind.NUMERICAL, (None, None))
    with pytest.raises(DataError):
        column_stats(c)


def test_stats_match_reference_on_random_columns():
    rng = random.Random(7)
    for trial in range(100):
        xs = [rng.gauss(0, 1) + (5 if rng.random() < 0.1 else 0) for _ in range(50)]
        c = Column("c", ColumnKind.NUMERICAL, tuple(xs))
        skew, kurt, ratio = ref_quant_stats(xs)
        s = c.stats()
        assert s.skewness == pytest.approx(skew, abs=1e-9)
        assert s.excess_kurtosis == pytest.approx(kurt, abs=1e-9)
        assert s.iqr_mean_ratio == pytest.approx(ratio, rel=1e-9)


def test_qualitative_entropy_matches_reference():
    rng = random.Random(11)
    for trial in range(100):
        xs = [rng.choice("ABCD") for _ in range(50)]
        c = Column("c", ColumnKind.CATEGORICAL, tuple(xs))
        counts = {v: xs.count(v) for v in set(xs)}
        expected = ref_entropy_bits([n / 50 for n in counts.values()])
        assert c.stats().entropy == pytest.approx(expected, abs=1e-9)


# ---------------------------------------------------------------------------
# Normalized entropy
# ---------------------------------------------------------------------------

def test_normalized_entropy_cases():
    assert normalized_entropy(Column("c", ColumnKind.CATEGORICAL, ("A", "B"))) == pytest.approx(1.0)
    assert normalized_entropy(Column("c", ColumnKind.CATEGORICAL, ("A",) * 4)) == 0.0
    # -(0.75 log2 0.75 + 0.25 log2 0.25) / log2 2
    expected = ref_entropy_bits([0.75, 0.25])
    got = normalized_entropy(Column("c", ColumnKind.CATEGORICAL, ("A", "A", "A", "B")))
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(0.8112781244591328, abs=1e-12)


# ---------------------------------------------------------------------------
# Pearson matrix
# ---------------------------------------------------------------------------

def _num_dataset(**cols) -> Dataset:
    return Dataset(
        columns=tuple(
            Column(name, ColumnKind.NUMERICAL, tuple(float(v) for v in vals))
            for name, vals in cols.items()
        )
    )


def test_pearson_exact_linear():
    d = _num_dataset(X=[1, 2, 3], Y=[2, 4, 6])
    m = d.pearson()
    assert m.get("X", "Y") == pytest.approx(1.0)
    assert m.get("X", "X") == 1.0


def test_pearson_constant_masked():
    d = _num_dataset(X=[1, 2, 3], Y=[5, 5, 5])
    m = d.pearson()
    assert not m.is_valid("X", "Y")
    assert not m.is_valid("Y", "Y")


def test_pearson_outlier_pair_value():
    xs, ys = [1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 100.0]
    expected = ref_pearson(xs, ys)
    d = _num_dataset(X=xs, Y=ys)
    assert d.pearson().get("X", "Y") == pytest.approx(expected, abs=1e-9)
    assert abs(expected) < 0.8  # stays below the correlation gate


def test_pearson_mixed_types_and_nulls():
    d = Dataset(
        columns=(
            Column("n", ColumnKind.NUMERICAL, (1.0, 2.0, 3.0, None, 5.0)),
            Column("b", ColumnKind.BOOLEAN, (False, False, True, True, True)),
            Column("c", ColumnKind.CATEGORICAL, ("x", "y", "x", "y", "x")),
            Column(
                "t",
                ColumnKind.DATETIME,
                tuple(datetime(2020, 1, 1 + i) for i in range(5)),
            ),
        )
    )
    m = d.pearson()
    assert m.is_valid("n", "t") and m.get("n", "t") == pytest.approx(1.0)
    assert m.is_valid("b", "c")
    joint = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0), (1.0, 0.0)]
    assert m.get("b", "c") == pytest.approx(ref_pearson(*zip(*joint)), abs=1e-12)


def test_pearson_symmetry_property():
    rng = np.random.default_rng(3)
    for _ in range(20):
        cols = {f"c{i}": rng.normal(size=12).tolist() for i in range(4)}
        m = _num_dataset(**cols).pearson()
        assert np.allclose(m.values, m.values.T)
        assert (m.valid == m.valid.T).all()
        assert np.all(np.abs(m.values[m.valid]) <= 1 + 1e-12)
        assert np.all(m.values[np.diag_indices(4)][np.diag(m.valid)] == 1.0)


def test_categorical_encoding_first_appearance():
    c = Column("c", ColumnKind.CATEGORICAL, ("b", "a", "b", "c", None))
    enc = c.encoded()
    assert enc[0] == 0.0 and enc[1] == 1.0 and enc[2] == 0.0 and enc[3] == 2.0
    assert np.isnan(enc[4])
    # pure function of the value sequence
    c2 = Column("other", ColumnKind.CATEGORICAL, ("b", "a", "b", "c", None))
    assert np.array_equal(c2.encoded(), enc, equal_nan=True)


def test_content_digest_invariant_to_column_order():
    a = Column("a", ColumnKind.NUMERICAL, (1.0, 2.0))
    b = Column("b", ColumnKind.CATEGORICAL, ("x", "y"))
    d1 = Dataset(columns=(a, b))
    d2 = Dataset(columns=(b, a))
    assert d1.content_digest() == d2.content_digest()
    d3 = Dataset(columns=(Column("a", ColumnKind.NUMERICAL, (2.0, 1.0)), b))
    assert d1.content_digest() != d3.content_digest()
