"""Kernel backends: numpy/numba agreement, assignment optimality."""

import numpy as np
import pytest

from swarmtrack import kernels
from swarmtrack.reference import assignment_reference, iou_reference


requires_numba = pytest.mark.skipif(
    "numba" not in kernels.available_backends(), reason="numba unavailable"
)


@pytest.fixture
def restore_backend():
    current = kernels.get_backend()
    yield
    kernels.set_backend(current)


class TestDispatch:
    def test_numpy_always_available(self):
        assert "numpy" in kernels.available_backends()

    def test_unknown_backend_rejected(self, restore_backend):
        with pytest.raises(ValueError):
            kernels.set_backend("cuda")

    @requires_numba
    def test_switching(self, restore_backend):
        kernels.set_backend("numpy")
        assert kernels.get_backend() == "numpy"
        kernels.set_backend("numba")
        assert kernels.get_backend() == "numba"


class TestLsap:
    def test_rectangular_both_orientations(self):
        cost = np.array([[1.0, 2.0, 0.5], [2.0, 0.1, 3.0]])
        rows, cols = kernels.lsap_minimize(cost)
        assert len(rows) == 2
        assert cost[rows, cols].sum() == pytest.approx(0.6)
        rows_t, cols_t = kernels.lsap_minimize(cost.T)
        assert cost.T[rows_t, cols_t].sum() == pytest.approx(0.6)

    def test_empty(self):
        rows, cols = kernels.lsap_minimize(np.zeros((0, 4)))
        assert rows.size == 0 and cols.size == 0

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            kernels.lsap_minimize(np.array([[np.inf, 1.0]]))

    def test_optimal_vs_enumeration_1000_trials(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            rows = int(rng.integers(1, 8))
            cols = int(rng.integers(1, 8))
            sim = rng.random((rows, cols)) * rng.uniform(0.5, 20.0)
            r, c = kernels.lsap_minimize(-sim)
            best, _ = assignment_reference(sim)
            assert abs(float(sim[r, c].sum()) - best) < 1e-10
            assert len(set(r.tolist())) == len(r)
            assert len(set(c.tolist())) == len(c)

    def test_negative_costs(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            sim = rng.normal(size=(4, 6)) * 5
            r, c = kernels.lsap_minimize(-sim)
            best, _ = assignment_reference(sim)
            assert abs(float(sim[r, c].sum()) - best) < 1e-10


class TestIouMatrix:
    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(2)
        a = np.column_stack([rng.uniform(0, 60, (8, 2)), rng.uniform(2, 25, (8, 2))])
        b = np.column_stack([rng.uniform(0, 60, (5, 2)), rng.uniform(2, 25, (5, 2))])
        got = kernels.iou_matrix(a, b)
        for i in range(8):
            for j in range(5):
                assert got[i, j] == pytest.approx(iou_reference(a[i], b[j]), abs=1e-12)

    def test_empty_sides(self):
        assert kernels.iou_matrix(np.zeros((0, 4)), np.zeros((3, 4))).shape == (0, 3)


class TestBackendAgreement:
    @requires_numba
    def test_all_kernels_agree(self, restore_backend):
        rng = np.random.default_rng(3)
        cost = rng.normal(size=(6, 7))
        boxes_a = np.column_stack([rng.uniform(0, 60, (6, 2)), rng.uniform(2, 25, (6, 2))])
        boxes_b = np.column_stack([rng.uniform(0, 60, (4, 2)), rng.uniform(2, 25, (4, 2))])
        centers = rng.uniform(-5, 90, size=(5, 2))
        feats = rng.normal(size=(5, 3))
        grad = rng.normal(size=(9, 11, 3))

        results = {}
        for backend in ("numpy", "numba"):
            kernels.set_backend(backend)
            results[backend] = (
                kernels.lsap_minimize(cost.copy()),
                kernels.iou_matrix(boxes_a, boxes_b),
                kernels.splat_forward(centers, feats, 9, 11, 1.5, 9.0),
                kernels.splat_backward(centers, feats, grad, 1.5, 9.0),
            )
        (r1, c1), iou1, fwd1, (gf1, gc1) = results["numpy"]
        (r2, c2), iou2, fwd2, (gf2, gc2) = results["numba"]
        assert cost[r1, c1].sum() == pytest.approx(cost[r2, c2].sum(), abs=1e-12)
        assert np.allclose(iou1, iou2, atol=1e-14, rtol=0)
        assert np.allclose(fwd1, fwd2, atol=1e-14, rtol=0)
        assert np.allclose(gf1, gf2, atol=1e-13, rtol=0)
        assert np.allclose(gc1, gc2, atol=1e-13, rtol=0)
