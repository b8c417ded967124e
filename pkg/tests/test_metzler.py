from __future__ import annotations

import numpy as np
import pytest

from lpvinterval.interval import DimensionError
from lpvinterval.metzler import (
    IllConditioned,
    MuTooSmall,
    NotRealDiagonalisable,
    SpectrumMatchFailure,
    eigendecomposition_transform,
    is_metzler,
    lemma3_transform,
)


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def sample_box(rng, da, delta, k):
    """Interior samples plus a few sign corners of ``|D - da| <= delta``."""
    out = [da + (2 * rng.random(da.shape) - 1) * delta for _ in range(k)]
    out += [da + rng.choice([-1.0, 1.0], size=da.shape) * delta for _ in range(k)]
    return out


class TestIsMetzler:
    def test_diagonal(self):
        assert is_metzler(np.diag([-1.0, -2.0]))

    def test_negative_off_diagonal(self):
        assert not is_metzler([[0.0, -0.1], [1.0, 0.0]], 0.0)

    def test_tolerance(self):
        assert is_metzler([[-1.0, -1e-14], [0.0, -1.0]], 1e-12)
        assert not is_metzler([[-1.0, -1e-10], [0.0, -1.0]], 1e-12)

    def test_non_square(self):
        with pytest.raises(DimensionError):
            is_metzler(np.zeros((2, 3)))

    def test_negative_tol(self):
        with pytest.raises(ValueError):
            is_metzler(np.eye(2), -1.0)


class TestEigendecomposition:
    def test_diagonal_input(self):
        tr = eigendecomposition_transform(np.diag([-3.0, -1.0]))
        # descending order swaps the columns
        assert np.allclose(np.abs(tr.S), [[0, 1], [1, 0]])
        assert np.allclose(tr.transformed_center, np.diag([-1.0, -3.0]))

    def test_known_spectrum(self):
        tr = eigendecomposition_transform([[0.0, 1.0], [2.0, 0.0]])
        assert np.allclose(np.diag(tr.transformed_center), [np.sqrt(2), -np.sqrt(2)], atol=1e-12)
        a = np.array([[0.0, 1.0], [2.0, 0.0]])
        assert np.allclose(tr.S_inv @ a @ tr.S, tr.transformed_center, atol=1e-12)

    def test_rotation_rejected(self):
        with pytest.raises(NotRealDiagonalisable):
            eigendecomposition_transform([[0.0, -1.0], [1.0, 0.0]])

    def test_defective_rejected(self):
        with pytest.raises(IllConditioned):
            eigendecomposition_transform([[1.0, 1.0], [0.0, 1.0]])

    def test_normalisation(self, rng):
        for _ in range(20):
            v = rng.normal(size=(3, 3))
            a = v @ np.diag(rng.normal(size=3)) @ np.linalg.inv(v)
            tr = eigendecomposition_transform(a)
            assert np.allclose(np.linalg.norm(tr.S, axis=0), 1.0)
            idx = np.argmax(np.abs(tr.S), axis=0)
            assert np.all(tr.S[idx, range(3)] > 0)
            d = np.diag(tr.transformed_center)
            assert np.all(np.diff(d) <= 0)
            assert tr.roundtrip_error() <= 1e-9 * 3
            assert is_metzler(tr.transformed_center, 1e-9)

    def test_deterministic(self):
        a = np.array([[-2.0, 1.0, 0.0], [0.5, -1.0, 0.2], [0.0, 0.3, -3.0]])
        t1, t2 = eigendecomposition_transform(a), eigendecomposition_transform(a)
        assert np.array_equal(t1.S, t2.S)


class TestLemma3:
    def test_identity_when_no_perturbation(self):
        tr = lemma3_transform(np.diag([-1.0, -2.0]), np.zeros((2, 2)), 0.1)
        assert np.array_equal(tr.S, np.eye(2))

    def test_example(self, rng):
        da = np.array([[-3.0, 1.0], [1.0, -3.0]])
        delta = 0.1 * np.ones((2, 2))
        tr = lemma3_transform(da, delta, 0.5)
        assert np.allclose(tr.S @ tr.S.T, np.eye(2), atol=1e-9)
        for d in sample_box(rng, da, delta, 50):
            assert is_metzler(tr.S.T @ d @ tr.S, 1e-9)

    def test_spectrum_matches(self, rng):
        q = random_orthogonal(rng, 3)
        da = q @ np.diag([-1.0, -3.0, -6.0]) @ q.T
        tr = lemma3_transform(da, 0.05 * np.ones((3, 3)), 0.2)
        assert np.allclose(np.linalg.eigvalsh(tr.transformed_center), np.linalg.eigvalsh(da), atol=1e-8)

    def test_mu_too_small(self):
        with pytest.raises(MuTooSmall):
            lemma3_transform(np.diag([-1.0, -2.0]), 0.1 * np.ones((2, 2)), 0.2)
        with pytest.raises(MuTooSmall):
            lemma3_transform(np.diag([-1.0, -2.0]), 0.1 * np.ones((2, 2)), 0.0)

    def test_repeated_eigenvalue_has_no_solution(self):
        # S^T (-3 I) S = -3 I for every orthogonal S, and the box contains both
        # E and -E, so no S can make every member Metzler
        with pytest.raises(SpectrumMatchFailure):
            lemma3_transform(-3.0 * np.eye(2), 0.1 * np.ones((2, 2)), 0.25)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            lemma3_transform([[0.0, 1.0], [0.0, 0.0]], np.zeros((2, 2)), 1.0)
        with pytest.raises(ValueError):
            lemma3_transform(np.eye(2), -np.ones((2, 2)), 1.0)
        with pytest.raises(DimensionError):
            lemma3_transform(np.eye(2), np.zeros((3, 3)), 1.0)
