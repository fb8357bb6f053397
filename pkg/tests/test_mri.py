import numpy as np
import pytest

from conftest import smooth_problem
from mrgark import (
    AdditiveProblem,
    MriCoupling,
    SpcMriCoupling,
    TableauError,
    assemble_gark,
    check_internal_consistency,
    check_mri_order3,
    check_spc_mri,
    dahlquist,
    mri_as_imex,
    mri_linear_coupling,
    mri_step,
    rodas,
    rodas_spc_mri,
    ros34pw2_spc_mri,
    spc_mri_as_spc,
    spc_mri_step,
    step_additive,
    step_base,
    step_monolithic,
    step_spc,
)
from mrgark.methods import classical_rk4, imim_base, ros34pw2
from mrgark.mri import rodas_linear_conditions

PUBLISHED_MU1_THETA0 = [0.0, -4.307016638790922, 4.541816529634874, 0.7652001091560487]


def imim_coupling(x1, y1):
    """Linear-in-time coupling on the (2)3 base with free entries in the last interval."""
    r = np.zeros((3, 2, 3))
    r[1, 1, 0] = 0.5
    r[2, 0, :2] = [0.5 - x1, x1]
    r[2, 1, :2] = [0.5 - y1, y1]
    return MriCoupling(imim_base(), r, np.zeros((3, 3)))


class TestMriCoupling:
    def test_rejects_decreasing_abscissae(self):
        from mrgark import BaseMethod

        slow = BaseMethod([[0, 0, 0], [0.8, 0, 0], [0.0, 0.3, 0]], np.zeros((3, 3)), [0.2, 0.3, 0.5])
        with pytest.raises(TableauError, match="non-decreasing"):
            MriCoupling(slow, np.zeros((3, 2, 3)), np.zeros((3, 3)))

    def test_rejects_future_slow_stage(self):
        r = imim_coupling(0.1, 0.2).r.copy()
        r[1, 0, 1] = 0.3
        with pytest.raises(TableauError, match="slow stages 1..1"):
            MriCoupling(imim_base(), r, np.zeros((3, 3)))

    def test_rejects_inconsistent_sums(self):
        r = imim_coupling(0.1, 0.2).r.copy()
        r[2, 1, 0] += 0.1
        with pytest.raises(TableauError, match="internally consistent"):
            MriCoupling(imim_base(), r, np.zeros((3, 3)))

    def test_q_relation_is_reported_not_enforced(self):
        coupling = imim_coupling(0.1, 0.2)
        assert coupling.consistency_defects()["q.delta_c"] == pytest.approx(5.0)


class TestLinearCoupling:
    def test_rk4_base_passes_ros_and_row(self):
        coupling = mri_linear_coupling(classical_rk4())
        for mode in ("ros", "row"):
            report = check_mri_order3(coupling, mode, tol=1e-12)
            assert report.achieved_order == 3, report.failures()

    def test_implicit_first_stage_is_refused_with_hint(self):
        with pytest.raises(TableauError, match="nonzero diagonal gamma"):
            mri_linear_coupling(imim_base())


class TestOrderConditions:
    def test_ros_only_coupling(self):
        # Weighted averages w = (7/6, -2/3, 0): w.e = 1/6 but w.c = -1/3.
        report = check_mri_order3(imim_coupling(-4 / 3, 0.0), "ros").by_id()
        assert abs(report["mri.ros3.r"].residual) < 1e-14
        row = check_mri_order3(imim_coupling(-4 / 3, 0.0), "row").by_id()
        assert row["mri.row3.rc"].residual == pytest.approx(-0.5)

    def test_zero_q_gives_zero_q_condition(self):
        report = check_mri_order3(imim_coupling(0.1, 0.2), "ros").by_id()
        assert report["mri.ros3.q"].residual == 0.0

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            check_mri_order3(mri_linear_coupling(classical_rk4()), "time_lagged")


class TestMriAsImex:
    def test_first_interval_weights_reach_all_slow_rows(self):
        coupling = mri_linear_coupling(classical_rk4())
        mrm = mri_as_imex(coupling)
        inner = classical_rk4()
        assert np.allclose(mrm.coupling.alpha_sf[0], np.outer(np.ones(4), inner.b))

    def test_constant_polynomials_give_equal_rows(self):
        r = np.zeros((3, 1, 3))
        slow = type(imim_base())(np.zeros((3, 3)), np.zeros((3, 3)), [0.2, 0.3, 0.5])
        with pytest.raises(TableauError):
            MriCoupling(slow, r, np.zeros((3, 3)))  # c = 0 never reaches 1
        coupling = mri_linear_coupling(classical_rk4())
        mrm = mri_as_imex(coupling)
        for lam in range(4):
            rows = mrm.coupling.alpha_fs[lam]
            expected = coupling.r_of(lam, classical_rk4().c)
            assert np.allclose(rows, expected)

    def test_automatic_consistency(self):
        mrm = mri_as_imex(mri_linear_coupling(classical_rk4()))
        report = check_internal_consistency(mrm)
        assert all(e.passed(1e-13) for e in report.entries if e.id.startswith("ic.c_"))

    def test_implicit_inner_rejected(self):
        with pytest.raises(TableauError):
            mri_as_imex(mri_linear_coupling(classical_rk4()), imim_base())


class TestMriStep:
    def test_matches_imex_equivalent(self, rng):
        coupling = mri_linear_coupling(classical_rk4())
        prob = smooth_problem(rng, autonomous=True)
        y0 = rng.normal(size=3)
        a = mri_step(coupling, prob, 0.0, y0, 0.1, substeps=1).y_next
        b = step_additive(mri_as_imex(coupling), prob, 0.0, y0, 0.1).y_next
        assert np.allclose(a, b, rtol=1e-12, atol=1e-14)

    def test_zero_fast_rhs_is_slow_base(self, rng):
        prob = smooth_problem(rng, autonomous=True)
        slow_only = AdditiveProblem(3, prob.f_slow, lambda t, y: np.zeros(3))
        y0 = rng.normal(size=3)
        a = mri_step(mri_linear_coupling(classical_rk4()), slow_only, 0.0, y0, 0.1).y_next
        b = step_base(classical_rk4(), slow_only, 0.0, y0, 0.1).y_next
        assert np.allclose(a, b, atol=1e-15)

    def test_inner_refinement(self):
        coupling = mri_linear_coupling(classical_rk4())
        prob = dahlquist(-1.0, -20.0)
        y0 = np.ones(1)
        sols = [mri_step(coupling, prob, 0.0, y0, 0.2, substeps=n).y_next[0] for n in (2, 4, 8, 16)]
        diffs = np.abs(np.diff(sols))
        ratios = diffs[:-1] / diffs[1:]
        assert np.all(ratios > 12.0)  # fourth-order inner scheme

    def test_bad_substeps(self):
        with pytest.raises(ValueError):
            mri_step(mri_linear_coupling(classical_rk4()), dahlquist(), 0.0, np.ones(1), 0.1, substeps=0)


class TestSpcMri:
    def test_published_coefficients(self):
        coupling = ros34pw2_spc_mri(0.0)
        assert np.array_equal(coupling.mu[1], PUBLISHED_MU1_THETA0)
        assert not coupling.mu[0].any()

    @pytest.mark.parametrize("theta", [0.0, 1.0, 0.37])
    def test_mu1_conditions(self, theta):
        mu1 = ros34pw2_spc_mri(theta).mu[1]
        base = ros34pw2()
        assert mu1.sum() == pytest.approx(1.0, abs=1e-12)
        assert mu1 @ base.c == pytest.approx(1 / 3, abs=1e-9)
        assert mu1 @ base.g == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("theta", [0.0, 1.0])
    def test_row3(self, theta):
        assert check_spc_mri(ros34pw2_spc_mri(theta), 3, "row", tol=1e-9).achieved_order == 3

    def test_zero_mu_is_inconsistent(self):
        with pytest.raises(TableauError, match="mu.sum"):
            SpcMriCoupling(ros34pw2(), np.zeros((2, 4)))

    def test_row_order4_not_available(self):
        with pytest.raises(ValueError, match="order-4 ROW"):
            check_spc_mri(ros34pw2_spc_mri(0.0), 4, "row")

    @pytest.mark.parametrize("substeps", [1, 3])
    def test_step_matches_spc_equivalent(self, substeps, rng):
        coupling = ros34pw2_spc_mri(0.4)
        prob = smooth_problem(rng, autonomous=True)
        y0 = rng.normal(size=3)
        a = spc_mri_step(coupling, prob, 0.0, y0, 0.05, substeps=substeps).y_next
        mrm = spc_mri_as_spc(coupling, substeps=substeps)
        b = step_spc(mrm, prob, 0.0, y0, 0.05).y_next
        c = step_monolithic(assemble_gark(mrm), prob, 0.0, y0, 0.05).y_next
        assert np.allclose(a, b, atol=1e-14) and np.allclose(b, c, atol=1e-14)

    def test_zero_fast_rhs_is_predictor(self, rng):
        prob = smooth_problem(rng, autonomous=True)
        slow_only = AdditiveProblem(3, prob.f_slow, lambda t, y: np.zeros(3))
        y0 = rng.normal(size=3)
        a = spc_mri_step(ros34pw2_spc_mri(0.2), slow_only, 0.0, y0, 0.1).y_next
        b = step_base(ros34pw2(), slow_only, 0.0, y0, 0.1).y_next
        assert np.allclose(a, b, atol=1e-15)


class TestRodasSpcMri:
    def test_last_stage_unused(self):
        coupling = rodas_spc_mri(0.1, 0.2, 0.0, 0.0, rodas())
        assert coupling.mu[0, 5] == 0.0 and coupling.mu[1, 5] == 0.0

    @pytest.mark.parametrize("thetas", [(0, 0, 0, 0), (0.1, -0.3, 0.2, 0.5)])
    def test_sums(self, thetas):
        coupling = rodas_spc_mri(*thetas, rodas())
        assert coupling.mu[0].sum() == pytest.approx(0.0, abs=1e-10)
        assert coupling.mu[1].sum() == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("thetas", [(0, 0, 0, 0), (0.1, -0.3, 0.2, 0.5)])
    def test_fourth_order(self, thetas):
        coupling = rodas_spc_mri(*thetas, rodas())
        assert rodas_linear_conditions(coupling).max_residual <= 1e-9
        assert check_spc_mri(coupling, 4, "ros", tol=1e-9).achieved_order == 4

    def test_needs_six_stages(self):
        with pytest.raises(TableauError, match="six-stage"):
            rodas_spc_mri(0, 0, 0, 0, ros34pw2())
