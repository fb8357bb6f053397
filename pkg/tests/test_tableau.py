import numpy as np
import pytest

from conftest import random_multirate
from mrgark import BaseMethod, MultirateMethod, TableauError, assemble_gark, load_tableau, save_tableau
from mrgark.methods import compound_first_step, imex_order23, imim_base, imim_order23, rank_one_shift, ros34pw2
from mrgark.tableau import (
    averaged_coupling,
    compose_substeps,
    coupling_blocks,
    dumps_tableau,
    intermediate_solution_weights,
    loads_tableau,
    structure_matrix,
)


def two_stage(a21=0.5, g=0.3):
    return BaseMethod([[0, 0], [a21, 0]], [[g, 0], [0.1, g]], [0.5, 0.5])


class TestBaseMethod:
    def test_derived_vectors(self):
        base = imim_base()
        assert np.allclose(base.c, [0.0, 0.5, 1.0])
        assert np.allclose(base.e, base.beta.sum(axis=1))
        assert np.allclose(base.g, base.gamma.sum(axis=1))

    def test_rejects_upper_alpha(self):
        with pytest.raises(TableauError, match="strictly lower"):
            BaseMethod([[0, 1], [0, 0]], np.eye(2), [0.5, 0.5])

    def test_rejects_upper_gamma(self):
        with pytest.raises(TableauError, match="lower triangular"):
            BaseMethod(np.zeros((2, 2)), [[1, 1], [0, 1]], [0.5, 0.5])

    def test_rejects_mismatched_sizes(self):
        with pytest.raises(TableauError, match="stage count"):
            BaseMethod(np.zeros((2, 2)), np.eye(2), [1.0, 0.0, 0.0])

    def test_single_lu(self):
        assert ros34pw2().single_lu
        assert not BaseMethod(np.zeros((2, 2)), np.diag([0.3, 0.4]), [0.5, 0.5]).single_lu

    def test_immutable(self):
        base = imim_base()
        with pytest.raises(ValueError):
            base.alpha[1, 0] = 3.0

    def test_compose_substeps_abscissae(self):
        base = compose_substeps(imim_base(), 3)
        assert base.s == 9
        expected = np.concatenate([(m + imim_base().c) / 3 for m in range(3)])
        assert np.allclose(base.c, expected)
        assert base.b.sum() == pytest.approx(1.0)


class TestAssembly:
    def test_two_by_two_layout(self):
        fast, slow = two_stage(0.5), two_stage(0.25)
        rng = np.random.default_rng(3)
        mats = [rng.normal(size=(2, 2)) for _ in range(8)]
        mrm = MultirateMethod.build(slow, fast, mats[0:2], mats[2:4], mats[4:6], mats[6:8], M=2)
        tab = assemble_gark(mrm)
        assert tab.A.shape == (6, 6)
        assert np.allclose(tab.A[2:4, 0:2], 0.5 * np.outer(np.ones(2), fast.b))
        assert np.allclose(tab.A[0:2, 0:2], 0.5 * fast.alpha)
        assert np.allclose(tab.A[2:4, 2:4], 0.5 * fast.alpha)
        assert np.allclose(tab.b, np.concatenate([fast.b / 2, fast.b / 2, slow.b]))
        assert tab.partition == ("F",) * 4 + ("S",) * 2
        assert tab.micro_step == (1, 1, 2, 2, 0, 0)

    def test_lossless(self, rng):
        mrm = random_multirate(rng, 3, 2, M=3)
        tab = assemble_gark(mrm)
        for lam in range(3):
            rows = slice(3 * lam, 3 * lam + 3)
            assert np.array_equal(tab.A[rows, 9:], mrm.coupling.alpha_fs[lam])
            assert np.array_equal(tab.G[rows, 9:], mrm.coupling.gamma_fs[lam])
            assert np.allclose(tab.A[9:, rows] * 3, mrm.coupling.alpha_sf[lam], atol=1e-15)
            assert np.allclose(tab.G[9:, rows] * 3, mrm.coupling.gamma_sf[lam], atol=1e-15)

    def test_single_micro_step_keeps_gamma(self):
        base = imim_base()
        mrm = MultirateMethod.build(base, base, base.alpha, base.gamma, base.alpha, base.gamma, M=1)
        tab = assemble_gark(mrm)
        assert np.array_equal(tab.G[:3, :3], base.gamma)

    def test_fast_abscissae_of_pure_method(self):
        mrm = imim_order23(M=4)
        tab = assemble_gark(mrm)
        iF = tab.indices("F")
        cFF = tab.A[np.ix_(iF, iF)].sum(axis=1)
        expected = np.concatenate([(lam + imim_base().c) / 4 for lam in range(4)])
        assert np.allclose(cFF, expected, atol=1e-15)

    def test_spc_assembly_has_predictor(self):
        from mrgark.methods import spc_telescopic

        tab = assemble_gark(spc_telescopic(imim_base(), 2))
        assert tab.s == 3 + 2 * 3 + 3
        assert tab.micro_step[:3] == (0, 0, 0)

    def test_coupling_blocks_keys(self):
        blocks = coupling_blocks(assemble_gark(imim_order23(M=2)))
        assert set(blocks) == {"A_FS", "A_SF", "G_FS", "G_SF"}

    def test_shape_mismatch_names_block(self):
        base = imim_base()
        with pytest.raises(TableauError, match="gamma_sf"):
            MultirateMethod.build(base, base, base.alpha, base.gamma, base.alpha, np.zeros((3, 2)), M=1)


class TestStructureMatrix:
    def test_imex_coupling_is_decoupled(self):
        assert not np.any(structure_matrix(imex_order23(M=4))[3:])

    def test_zero_coupling(self):
        base = imim_base()
        z = np.zeros((3, 3))
        assert not np.any(structure_matrix(MultirateMethod.build(base, base, z, z, z, z, M=2)))

    def test_single_pair_entry(self):
        base = two_stage()
        z = np.zeros((2, 2))
        g_sf = z.copy()
        g_fs = z.copy()
        g_sf[0, 0] = 0.7
        g_fs[0, 0] = -0.4
        mrm = MultirateMethod.build(base, base, [z, z], [g_fs, z], [z, z], [g_sf, z], M=2)
        S = structure_matrix(mrm)
        expected = np.zeros((4, 2))
        expected[0, 0] = 0.5 * 0.7 * 0.4
        assert np.allclose(S, expected)

    def test_elementwise_definition(self, rng):
        base = two_stage()
        for _ in range(5):
            mats = [rng.normal(size=(2, 2)) * (rng.random((2, 2)) < 0.5) for _ in range(4)]
            mrm = MultirateMethod.build(base, base, mats[0], mats[1], mats[2], mats[3], M=1)
            fs = np.abs(mats[0]) + np.abs(mats[1])
            sf = np.abs(mats[2]) + np.abs(mats[3])
            assert np.allclose(structure_matrix(mrm), sf.T * fs)


class TestAverages:
    def test_identical_matrices(self):
        base = imim_base()
        mrm = MultirateMethod.build(base, base, base.alpha, base.gamma, base.alpha, base.gamma, M=5)
        assert np.allclose(averaged_coupling(mrm, "alphaFS", 0), 5 * base.alpha)

    def test_k1_single_step_is_zero(self):
        assert not np.any(averaged_coupling(imim_order23(M=1), "gammaFS", 1))

    def test_rank_one_shift_sum(self):
        base = imim_base()
        v1 = np.array([0.2, 0.5, 0.3])
        M = 6
        mrm = compound_first_step(base, M, F=rank_one_shift(v1))
        F_sum = averaged_coupling(mrm, "alpha_fs", 1) * M - base.alpha * M * (M - 1) / 2
        # sum_l (l-1) F(l) = sum_l (l-1)^2 1 v1^T
        expected = sum((lam - 1) ** 2 for lam in range(1, M + 1)) * np.outer(np.ones(3), v1)
        assert np.allclose(F_sum, expected)

    def test_negative_k(self):
        with pytest.raises(ValueError):
            averaged_coupling(imim_order23(M=2), "alpha_fs", -1)


class TestIntermediateWeights:
    def test_zero_is_empty(self):
        assert intermediate_solution_weights(imim_order23(M=3), 0).shape == (0, 3)

    def test_first(self):
        mrm = imim_order23(M=3)
        assert np.allclose(intermediate_solution_weights(mrm, 1), [mrm.fast.b])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            intermediate_solution_weights(imim_order23(M=3), 4)


class TestTableauFiles:
    def test_roundtrip_multirate(self, tmp_path):
        mrm = imex_order23(M=3)
        path = tmp_path / "imex.tab"
        save_tableau(mrm, path)
        again = load_tableau(path)
        assert again.flavor == "imex" and again.M == 3
        for fam in ("alpha_fs", "gamma_fs", "alpha_sf", "gamma_sf"):
            for a, b in zip(mrm.coupling.family(fam), again.coupling.family(fam)):
                assert np.array_equal(a, b)
        assert again.fast_steps[1].is_explicit

    def test_roundtrip_base(self):
        base = ros34pw2()
        again = loads_tableau(dumps_tableau(base))
        assert again.same_coefficients(base)
        assert np.array_equal(again.b_hat, base.b_hat)

    def test_header(self):
        first = dumps_tableau(imim_order23(M=2)).splitlines()[0]
        assert first == "9 2 3 3 compound_first_step"

    def test_bad_header(self):
        with pytest.raises(TableauError, match="header"):
            loads_tableau("3 1 3\nslow.alpha\n0 0 0\n")

    def test_missing_block(self):
        text = dumps_tableau(imim_base()).replace("slow.gamma", "slow.gama")
        with pytest.raises(TableauError, match="missing block"):
            loads_tableau(text)
