import math

import numpy as np
import pytest

from mrgark import (
    PROBLEMS,
    build_problem,
    coupled_linear_2x2,
    dahlquist,
    integrate,
    pendulum_oscillator,
    prothero_robinson,
    reference_solution,
)
from mrgark.integrator import reference_solve
from mrgark.methods import imim_order23
from mrgark.problems import PendulumParameters


class TestDahlquist:
    def test_zero_rates_constant(self):
        prob = dahlquist(0.0, 0.0, y0=3.0)
        assert integrate(imim_order23(M=2), prob, 0.0, 1.0, 0.25).y_final[0] == 3.0

    def test_exact(self):
        assert dahlquist(-1.0, -10.0).exact(1.0)[0] == pytest.approx(math.exp(-11.0), rel=1e-15)


class TestLinear2x2:
    def test_decoupled_exponentials(self):
        prob = coupled_linear_2x2(-4.0, -0.5, 0.0, 0.0)
        yF, yS = prob.exact(2.0)
        assert yF[0] == pytest.approx(math.exp(-8.0), rel=1e-12)
        assert yS[0] == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_weak_coupling_bounded(self):
        lf, ls, es, ef = -10.0, -1.0, 1.5, 2.0
        assert abs(es * ef) / abs(lf * ls) < 1.0
        eig = np.linalg.eigvals([[lf, es], [ef, ls]])
        assert np.all(eig.real < 0)
        prob = coupled_linear_2x2(lf, ls, es, ef, t_span=(0.0, 10.0))
        for t in np.linspace(0, 10, 11):
            assert np.all(np.abs(np.concatenate(prob.exact(t))) <= 2.0)


class TestPendulum:
    def test_no_spring_means_no_slow_force(self):
        prob = pendulum_oscillator(PendulumParameters(k=0.0, d=0.0))
        y = np.array([0.4, 0.2, -0.3, 0.7])
        assert not prob.f_slow(0.0, y).any()
        assert np.allclose(prob.f_fast(0.0, y), [-0.3, 0.7, -9.81 * math.sin(0.4), 0.0])

    def test_equilibrium_without_gravity(self):
        p = PendulumParameters(g=0.0)
        angle = math.pi / 6
        prob = pendulum_oscillator(p, y0=(angle, p.length * math.sin(angle), 0.0, 0.0))
        final = integrate(imim_order23(M=2), prob, 0.0, 1.0, 0.1).y_final
        assert np.allclose(final, prob.y0, atol=1e-14)

    def test_defaults(self):
        prob = pendulum_oscillator()
        assert np.allclose(prob.y0, [math.pi / 4, 0.5, 0.0, 0.0])
        assert prob.t_span == (0.0, 1.0)
        assert prob.slow_index == (1, 3) and prob.fast_index == (0, 2)

    def test_reference_self_consistent(self):
        prob = pendulum_oscillator(exact_jacobian=True)
        a = reference_solution(prob, 0.0, 1.0)
        b = reference_solve(prob, 0.0, 1.0, tol=1e-10, initial_steps=64)
        assert np.allclose(a, b, atol=1e-8, rtol=0)


class TestProtheroRobinson:
    def test_initial_value(self):
        prob = prothero_robinson()
        assert np.array_equal(prob.join(*prob.y0), [2.0, 2.0])

    @pytest.mark.parametrize("lambda1", [-1e6, -1e-6])
    def test_exact_solution_residual(self, lambda1):
        prob = prothero_robinson(lambda1=lambda1)
        add = prob.as_additive()
        h = 1e-6
        for t in np.linspace(0.0, 2.0, 9):
            y = add.exact(t)
            dy = (add.exact(t + h) - add.exact(t - h)) / (2 * h)
            assert np.allclose(add.rhs(t, y), dy, atol=1e-6)
            yF, yS = prob.exact(t)
            assert abs(prob.f_slow(t, yF, yS)[0] - 2 * math.pi * math.cos(2 * math.pi * t)) <= 1e-10
            assert abs(prob.f_fast(t, yF, yS)[0] - 20 * math.pi * math.cos(20 * math.pi * t)) <= 1e-10

    def test_jacobian_blocks(self):
        from mrgark.integrator import fd_jacobian

        prob = prothero_robinson(lambda1=-50.0)
        add = prob.as_additive()
        y = np.array([2.3, 1.7])
        J = add.jacobian("F", 0.1, y) + add.jacobian("S", 0.1, y)
        assert np.allclose(J, fd_jacobian(add.rhs, 0.1, y), rtol=1e-6, atol=1e-6)

    def test_time_derivative(self):
        from mrgark.integrator import fd_time_derivative

        add = prothero_robinson(lambda1=-50.0).as_additive()
        y = np.array([2.3, 1.7])
        for part, f in (("F", add.f_fast), ("S", add.f_slow)):
            assert np.allclose(add.time_derivative(part, 0.3, y), fd_time_derivative(f, 0.3, y), rtol=1e-6)


class TestRegistry:
    def test_names(self):
        assert set(PROBLEMS) == {"dahlquist", "linear2x2", "pendulum", "pr"}

    def test_parameters(self):
        prob = build_problem("pr", eps=1e-3, lambda1=-5.0)
        yF, yS = prob.y0
        assert prob.f_slow(0.0, yF + 1.0, yS)[0] == pytest.approx(1e-3 + 2 * math.pi)

    def test_unknown(self):
        with pytest.raises(KeyError, match="unknown problem"):
            build_problem("lorenz")

    def test_pendulum_constants_passed_flat(self):
        prob = build_problem("pendulum", k=0.0, d=0.0)
        assert not prob.f_slow(0.0, np.array([0.4, 0.2, -0.3, 0.7])).any()
