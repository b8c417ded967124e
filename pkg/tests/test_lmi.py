from __future__ import annotations

import numpy as np
import pytest

from lpvinterval.interval import DimensionError, IntervalVector
from lpvinterval.lmi import (
    FIELDS,
    Infeasible,
    LmiCertificate,
    build_upsilon,
    check_certificate,
    iss_bound,
    lyapunov_value,
    max_eig,
    min_diag,
    search_certificate,
)
from lpvinterval.predictor import PolytopicModel, SignalBounds, extended_input, integrate

SCALAR = PolytopicModel([[-1.5]], ([[0.0]], [[1.0]]), [[1.0]])


def random_cert(rng, size):
    return LmiCertificate.from_flat(rng.normal(size=len(FIELDS) * size))


@pytest.fixture(scope="module")
def scalar_cert():
    return search_certificate(SCALAR, seed=0)


class TestMinDiag:
    def test_examples(self):
        assert np.array_equal(min_diag([1, 2], [2, 1]), [1, 1])
        assert np.array_equal(min_diag([1, 2], [1, 2]), [1, 2])
        assert np.array_equal(min_diag([-1, 3], [0, -3]), [-1, -3])

    def test_length(self):
        with pytest.raises(DimensionError):
            min_diag([1.0], [1.0, 2.0])


class TestCertificate:
    def test_length_mismatch(self):
        vals = {f: np.zeros(2) for f in FIELDS}
        vals["psi"] = np.zeros(3)
        with pytest.raises(DimensionError):
            LmiCertificate(**vals)

    def test_dict_round_trip(self, rng, tmp_path):
        c = random_cert(rng, 4)
        c.dump(tmp_path / "c.json")
        c2 = LmiCertificate.load(tmp_path / "c.json")
        assert np.array_equal(c.flat(), c2.flat())

    def test_unknown_field(self):
        d = LmiCertificate.zeros(2).to_dict()
        d["extra"] = [0, 0]
        with pytest.raises(ValueError, match="unknown"):
            LmiCertificate.from_dict(d)
        d = LmiCertificate.zeros(2).to_dict()
        del d["p"]
        with pytest.raises(ValueError, match="missing"):
            LmiCertificate.from_dict(d)


class TestUpsilon:
    def test_zero_certificate(self):
        u = build_upsilon(SCALAR, LmiCertificate.zeros(2))
        assert u.shape == (8, 8) and not u.any()

    def test_symmetric(self, rng):
        m = PolytopicModel([[-1.0, 0.2], [0.3, -2.0]], ([[0.1, -0.2], [0.0, 0.3]],), np.eye(2))
        u = build_upsilon(m, random_cert(rng, 4))
        assert np.allclose(u, u.T, atol=1e-12)

    def test_linear(self, rng):
        c1, c2 = random_cert(rng, 2), random_cert(rng, 2)
        assert np.allclose(build_upsilon(SCALAR, c1) + build_upsilon(SCALAR, c2), build_upsilon(SCALAR, c1 + c2),
                           atol=1e-12)

    def test_dimension(self):
        with pytest.raises(DimensionError):
            build_upsilon(SCALAR, LmiCertificate.zeros(4))


class TestCheck:
    def test_zero_is_infeasible(self):
        r = check_certificate(SCALAR, LmiCertificate.zeros(2))
        assert not r.feasible
        assert r.positivity1_margin == 0 and r.positivity2_margin == 0 and r.gamma_margin == 0

    def test_negative_gamma(self, scalar_cert):
        bad = scalar_cert.replace(gamma=-np.ones(2))
        assert not check_certificate(SCALAR, bad).feasible

    def test_negated_gamma(self, scalar_cert):
        assert not check_certificate(SCALAR, scalar_cert.replace(gamma=-scalar_cert.gamma)).feasible

    @pytest.mark.parametrize("alpha", [1e-3, 0.5, 7.0, 1e3])
    def test_homogeneous(self, scalar_cert, alpha):
        assert check_certificate(SCALAR, scalar_cert.scaled(alpha)).feasible

    def test_negative_tol(self):
        with pytest.raises(ValueError):
            check_certificate(SCALAR, LmiCertificate.zeros(2), -1.0)


class TestSearch:
    def test_scalar_feasible(self, scalar_cert):
        r = check_certificate(SCALAR, scalar_cert, 1e-8)
        assert r.feasible and r.upsilon_max_eig <= 1e-8

    def test_deterministic(self, scalar_cert):
        again = search_certificate(SCALAR, seed=0)
        assert np.array_equal(again.flat(), scalar_cert.flat())

    def test_anti_stable(self):
        with pytest.raises(Infeasible):
            search_certificate(PolytopicModel([[1.0]], (), [[1.0]]), max_iters=500)

    def test_two_state_model(self):
        m = PolytopicModel([[-2.0, 0.5], [0.2, -1.5]], ([[0.1, 0.0], [0.0, 0.2]], [[-0.1, 0.1], [0.0, 0.0]]), np.eye(2))
        cert = search_certificate(m, seed=1)
        assert check_certificate(m, cert).feasible


class TestLyapunov:
    def test_quadratic_case(self):
        c = LmiCertificate.zeros(2).replace(p=np.ones(2))
        assert lyapunov_value(c, [3.0, -4.0]) == 25.0

    def test_origin(self, scalar_cert):
        assert lyapunov_value(scalar_cert, [0.0, 0.0]) == 0.0

    def test_dimension(self):
        with pytest.raises(DimensionError):
            lyapunov_value(LmiCertificate.zeros(2), [1.0])

    def test_iss_bound_holds_with_disturbance(self, scalar_cert):
        d = SignalBounds.constant([-0.1], [0.1])
        tr = integrate("stable", SCALAR, IntervalVector([1.0], [1.1]), d, 20.0, 0.001)
        vals = np.array([lyapunov_value(scalar_cert, np.concatenate([lo, hi])) for lo, hi in zip(tr.lower, tr.upper)])
        bound = iss_bound(scalar_cert, vals[0], extended_input(SCALAR, d.d_lower[0], d.d_upper[0]))
        assert np.all(vals <= 1.1 * bound)
