import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mose.drift import drift_analysis, read_drift_csv, separation, write_drift_csv
from mose.editors import EditorSpec, run_sequential
from mose.errors import DimensionError
from mose.linalg import random_orthogonal
from mose.memory import build_memory, make_edit_stream


@pytest.fixture(scope="module")
def mem32():
    return build_memory(32, 32, 16, 6, seed=0)


def run(mem, name, n, seed=0):
    stream = make_edit_stream(mem, n, 1, seed=seed)
    return run_sequential(EditorSpec(name), mem, stream), stream


class TestDriftAnalysis:
    def test_identity_zero(self, mem32):
        res, stream = run(mem32, "identity", 20)
        out = drift_analysis(mem32, res.steps, stream)
        assert out.separation == 0.0
        np.testing.assert_array_equal(out.current, out.cumulative)

    @pytest.mark.parametrize("name", ["mose", "additive"])
    def test_single_edit_zero(self, mem32, name):
        res, stream = run(mem32, name, 1)
        assert drift_analysis(mem32, res.steps, stream).separation == 0.0

    def test_multiplicative_single_update(self, mem32):
        res, stream = run(mem32, "mose", 5)
        out = drift_analysis(mem32, res.steps, stream)
        j = 3
        np.testing.assert_allclose(out.current[:, j], res.steps[j].update @ mem32.w0 @ stream[j].keys[:, 0])
        np.testing.assert_allclose(out.cumulative[:, j], res.final_w @ stream[j].keys[:, 0])

    def test_shapes_and_sampling(self, mem32):
        res, stream = run(mem32, "additive", 12)
        out = drift_analysis(mem32, res.steps, stream, k=3, n_samples=10)
        assert out.current.shape == (32, 10) and out.projected.shape == (3, 20)

    def test_misaligned(self, mem32):
        res, stream = run(mem32, "mose", 4)
        with pytest.raises(DimensionError):
            drift_analysis(mem32, res.steps[:3], stream)

    def test_additive_separates_more(self, mem32):
        a, stream = run(mem32, "additive", 60, seed=2)
        m, _ = run(mem32, "mose", 60, seed=2)
        assert drift_analysis(mem32, a.steps, stream).separation > drift_analysis(mem32, m.steps, stream).separation


class TestSeparation:
    def test_coincident(self):
        pts = np.random.default_rng(0).standard_normal((2, 5))
        assert separation(np.hstack([pts, pts]), 5) == 0.0

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(2, 20))
    def test_rotation_invariant(self, seed, n):
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((3, 2 * n))
        rot = random_orthogonal(3, seed).matrix
        s = separation(pts, n)
        assert s >= 0.0
        assert separation(rot @ pts, n) == pytest.approx(s, rel=1e-9)


def test_csv_round_trip(mem32, tmp_path):
    res, stream = run(mem32, "additive", 8)
    out = drift_analysis(mem32, res.steps, stream)
    path = tmp_path / "drift.csv"
    write_drift_csv(path, out)
    assert path.read_text().splitlines()[0] == "edit_index,regime,pc1,pc2"
    rows = read_drift_csv(path)
    assert [r["regime"] for r in rows] == ["current"] * 8 + ["cumulative"] * 8
    back = np.array([[r["pc1"], r["pc2"]] for r in rows]).T
    assert back.tobytes() == out.projected.tobytes()
