import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from feedopt.exceptions import CertificateError, ConfigurationError, StabilityError
from feedopt.plant import (BoxConstraint, LinearPlant, PlantDims, PlantState, SaturatedPlant,
                           lyapunov_certificate, lyapunov_value, perturb_sensitivity,
                           random_linear_plant, saturate, spectral_radius_power)


def scalar_plant(a=0.5, b=1.0, c=1.0):
    return LinearPlant([[a]], [[b]], [[c]], [[0.0]], [[0.0]], [0.0])


def kron_lyapunov(A, Q):
    # vec(A^T P A) = (A^T kron A^T) vec(P), independent of the library's solver
    n = A.shape[0]
    K = np.eye(n * n) - np.kron(A.T, A.T)
    return np.linalg.solve(K, Q.reshape(-1)).reshape(n, n)


class TestStep:
    def test_nilpotent(self):
        plant = LinearPlant(np.zeros((2, 2)), np.eye(2), np.eye(2), np.zeros((2, 1)), np.zeros((2, 1)))
        state, y = plant.step(plant.initial_state(), [1.0, 0.0])
        np.testing.assert_array_equal(state.x, [1.0, 0.0])
        assert state.k == 1

    def test_scalar(self):
        state, y = scalar_plant().step(PlantState(np.array([2.0])), [1.0])
        np.testing.assert_allclose(state.x, [2.0])
        # output is measured at the new state
        np.testing.assert_allclose(y, [2.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            scalar_plant().step(PlantState(np.zeros(1)), [1.0, 2.0])

    def test_seeded_plant_contracts(self, bench):
        plant = bench.plant
        u = np.linspace(-1, 1, plant.p)
        x_ss = plant.steady_state(u)[0]
        state = plant.initial_state()
        errs = []
        for _ in range(30):
            state, _ = plant.step(state, u)
            errs.append(np.linalg.norm(state.x - x_ss))
        # stop before the error reaches roundoff level
        errs = np.array([e for e in errs if e > 1e-10 * np.linalg.norm(x_ss)])
        ratios = errs[3:] / errs[2:-1]
        assert ratios.size >= 4
        assert np.all(ratios <= 0.06)

    def test_rejects_unstable(self):
        with pytest.raises(StabilityError):
            scalar_plant(a=1.0)


class TestSteadyState:
    def test_zero_dynamics(self, rng):
        B = rng.random((3, 2))
        E = rng.random((3, 1))
        plant = LinearPlant(np.zeros((3, 3)), B, np.eye(3), np.zeros((3, 1)), E, [0.7])
        u = rng.standard_normal(2)
        np.testing.assert_allclose(plant.steady_state(u)[0], B @ u + E @ [0.7])

    def test_scalar(self):
        np.testing.assert_allclose(scalar_plant().steady_state([1.0])[0], [2.0])

    def test_fixed_point_residual(self, bench, rng):
        plant = bench.plant
        for _ in range(100):
            u = rng.standard_normal(plant.p)
            x_ss = plant.steady_state(u)[0]
            assert np.linalg.norm(plant.transition(x_ss, u) - x_ss) <= 1e-10 * (1 + np.linalg.norm(x_ss))

    def test_lipschitz(self, bench, rng):
        plant = bench.plant
        M_x = plant.lipschitz_x()
        for _ in range(100):
            u1, u2 = rng.standard_normal((2, plant.p))
            dx = np.linalg.norm(plant.steady_state(u1)[0] - plant.steady_state(u2)[0])
            assert dx <= M_x * np.linalg.norm(u1 - u2) * (1 + 1e-12)


class TestSensitivity:
    def test_identity_output(self, rng):
        B = rng.random((3, 2))
        plant = LinearPlant(np.zeros((3, 3)), B, np.eye(3), np.zeros((3, 1)), np.zeros((3, 1)))
        np.testing.assert_allclose(plant.sensitivity(), B)

    def test_scalar(self):
        np.testing.assert_allclose(scalar_plant().sensitivity(), [[2.0]])

    def test_matches_steady_state(self, bench, rng):
        plant = bench.plant
        H = plant.sensitivity()
        y0 = plant.steady_state(np.zeros(plant.p))[1]
        for _ in range(10):
            u = rng.standard_normal(plant.p)
            np.testing.assert_allclose(plant.steady_state(u)[1] - y0, H @ u, atol=1e-9)


class TestPerturb:
    def test_zero_bound(self, bench, rng):
        H = bench.plant.sensitivity()
        np.testing.assert_array_equal(perturb_sensitivity(H, 0.0, rng), H)

    @pytest.mark.parametrize("bound", [0.05, 0.10])
    def test_within_bound(self, bench, bound):
        H = bench.plant.sensitivity()
        Hp = perturb_sensitivity(H, bound, np.random.default_rng(3))
        assert np.all(np.abs(Hp - H) <= bound * np.abs(H) + 1e-15)
        np.testing.assert_array_equal(Hp, perturb_sensitivity(H, bound, np.random.default_rng(3)))


class TestCertificate:
    def test_zero_dynamics(self):
        plant = LinearPlant(np.zeros((2, 2)), np.eye(2), np.eye(2), np.zeros((2, 1)), np.zeros((2, 1)))
        cert = lyapunov_certificate(plant)
        np.testing.assert_allclose(cert.P, np.eye(2))
        assert (cert.alpha1, cert.alpha2, cert.alpha3, cert.mu) == pytest.approx((1, 1, 1, 0))

    def test_half_identity(self):
        plant = LinearPlant(0.5 * np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 1)), np.zeros((2, 1)))
        cert = lyapunov_certificate(plant)
        np.testing.assert_allclose(cert.P, 4 / 3 * np.eye(2))
        assert cert.alpha1 == pytest.approx(4 / 3)
        assert cert.alpha3 == pytest.approx(1.0)
        assert cert.mu == pytest.approx(0.5)

    def test_matches_kronecker_solution(self, bench):
        A = bench.plant.A
        np.testing.assert_allclose(bench.certificate.P, kron_lyapunov(A, np.eye(A.shape[0])), atol=1e-12)

    def test_seeded_rate_below_one(self, bench):
        cert = bench.certificate
        assert cert.mu < 1
        assert cert.mu == (2 * cert.alpha2 / cert.alpha1) * (1 - cert.alpha3 / cert.alpha2)

    def test_inconsistent_solver_output_rejected(self):
        # any exact solution has P >= Q, so a bad P can only come from the solver
        plant = LinearPlant(np.zeros((2, 2)), np.eye(2), np.eye(2), np.zeros((2, 1)), np.zeros((2, 1)))
        with pytest.raises(CertificateError):
            _force_bad(plant)

    def test_sandwich_and_decrement(self, bench, rng):
        plant, cert = bench.plant, bench.certificate
        for _ in range(1000):
            u = rng.standard_normal(plant.p)
            x = 10 * rng.standard_normal(plant.n)
            e = x - plant.steady_state(u)[0]
            V = lyapunov_value(cert, plant, x, u)
            sq = e @ e
            assert cert.alpha1 * sq - 1e-8 <= V <= cert.alpha2 * sq + 1e-8
            V_next = lyapunov_value(cert, plant, plant.transition(x, u), u)
            assert V_next - V <= -cert.alpha3 * sq + 1e-8

    def test_value_examples(self, bench, rng):
        plant, cert = bench.plant, bench.certificate
        u = rng.standard_normal(plant.p)
        assert lyapunov_value(cert, plant, plant.steady_state(u)[0], u) == pytest.approx(0.0, abs=1e-20)
        unit = LinearPlant(np.zeros((2, 2)), np.eye(2), np.eye(2), np.zeros((2, 1)), np.zeros((2, 1)))
        c = lyapunov_certificate(unit)
        assert lyapunov_value(c, unit, [1.0, 0.0], [0.0, 0.0]) == pytest.approx(1.0)


def _force_bad(plant):
    from unittest import mock

    # a solver returning a P with lambda_max(P) < lambda_min(Q) must be refused
    with mock.patch("feedopt.plant.linalg.solve_discrete_lyapunov", return_value=0.5 * np.eye(2)):
        return lyapunov_certificate(plant)


class TestSaturation:
    def test_inside_unchanged(self):
        box = BoxConstraint([-1.0, -1.0], [1.0, 1.0])
        np.testing.assert_array_equal(saturate([0.2, -0.3], box), [0.2, -0.3])

    def test_clamp(self):
        np.testing.assert_array_equal(saturate([5.0], BoxConstraint([-1.0], [1.0])), [1.0])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=3, max_size=3),
           st.lists(st.floats(0, 5), min_size=3, max_size=3))
    def test_property(self, u, width):
        lower = np.array([-1.0, 0.0, 2.0])
        box = BoxConstraint(lower, lower + np.array(width))
        s = saturate(u, box)
        assert box.contains(s)
        inside = (np.array(u) >= box.lower) & (np.array(u) <= box.upper)
        np.testing.assert_array_equal(s[inside], np.array(u)[inside])

    def test_saturated_plant_wrapper(self):
        box = BoxConstraint([-1.0], [1.0])
        plant = SaturatedPlant(scalar_plant(), box)
        state, _ = plant.step(plant.initial_state(), [3.0])
        np.testing.assert_allclose(state.x, [1.0])
        np.testing.assert_array_equal(plant.last_applied, [1.0])


class TestGeneration:
    def test_radius(self):
        plant = random_linear_plant(PlantDims(20, 10, 5, 5), np.random.default_rng(0), 0.05)
        assert np.max(np.abs(np.linalg.eigvals(plant.A))) == pytest.approx(0.05, rel=1e-9)

    def test_power_iteration(self):
        A = np.random.default_rng(1).random((8, 8))
        assert spectral_radius_power(A) == pytest.approx(np.max(np.abs(np.linalg.eigvals(A))), rel=1e-10)

    def test_dims_positive(self):
        with pytest.raises(ConfigurationError):
            PlantDims(0, 1, 1, 1)

    def test_serialization_round_trip(self, bench):
        plant = bench.plant
        back = LinearPlant.from_dict(plant.to_dict())
        for name in ("A", "B", "C", "D", "E", "d"):
            np.testing.assert_array_equal(getattr(back, name), getattr(plant, name))

    def test_serialization_rejects_unknown(self, bench):
        data = bench.plant.to_dict()
        data["F"] = [[1.0]]
        with pytest.raises(ConfigurationError):
            LinearPlant.from_dict(data)
