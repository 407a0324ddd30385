import io
import json
import math

import numpy as np
import pytest
from scipy.linalg import expm

from grwcount.way import model as wm
from grwcount.way import search, sweep


def pauli():
    sx, sy, sz = wm.spin_matrices(0.5)
    return sx, sy, sz


class TestSpin:
    @pytest.mark.parametrize("j", [0.5, 1.0, 1.5, 4.0, 12.5])
    def test_algebra(self, j):
        jx, jy, jz = wm.spin_matrices(j)
        assert np.allclose(jx @ jy - jy @ jx, 1j * jz, atol=1e-12)
        casimir = jx @ jx + jy @ jy + jz @ jz
        assert np.allclose(casimir, j * (j + 1) * np.eye(int(2 * j + 1)), atol=1e-10)

    def test_zero(self):
        jx, jy, jz = wm.spin_matrices(0)
        assert jz.shape == (1, 1) and jz[0, 0] == 0

    def test_half_integer_only(self):
        with pytest.raises(ValueError):
            wm.spin_matrices(0.3)


class TestResiduals:
    def test_identity(self):
        G = np.diag([1.0, 0.0, -1.0, 2.0])
        assert wm.conservation_residual(np.eye(4), G) == 0

    def test_exponential(self):
        rng = np.random.default_rng(3)
        A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        G = A + A.conj().T
        assert wm.conservation_residual(expm(-1j * G), G) < 1e-12

    def test_random_unitaries_violate(self):
        rng = np.random.default_rng(4)
        G = np.diag([1.0, 0.0, -1.0, 2.0])
        for _ in range(20):
            assert wm.conservation_residual(wm.haar_unitary(4, rng), G) > 0.1

    def test_dimension_mismatch(self):
        with pytest.raises(wm.DimensionError):
            wm.conservation_residual(np.eye(3), np.eye(4))

    def test_conserving_generator(self):
        rng = np.random.default_rng(5)
        G = np.diag([0.0, 1.0, 1.0, 2.0, 2.0, 2.0])
        U = wm.random_conserving_unitary(G, rng)
        assert wm.unitarity_residual(U) < 1e-12
        assert wm.conservation_residual(U, G) < 1e-12
        assert len(wm.commutant_basis(G)) == 1 + 4 + 9


class TestObstruction:
    def test_pauli(self):
        sx, _, sz = pauli()
        # [S_z, S_x] = i S_y and ||S_y|| = 1/2
        assert wm.commutator_obstruction(sx, sz) == pytest.approx(0.5, abs=1e-15)

    def test_commuting(self):
        _, _, sz = pauli()
        assert wm.commutator_obstruction(sz, 3 * sz + np.eye(2)) == 0


class TestModel:
    def test_validation(self):
        sx, _, sz = pauli()
        I4 = np.eye(4)
        with pytest.raises(wm.DimensionError):
            wm.WAYModel(sz, sz, sz, np.eye(3), [1, 0])
        with pytest.raises(ValueError, match="Hermitian"):
            wm.WAYModel(sz + np.array([[0, 1], [0, 0]]), sz, sz, I4, [1, 0])
        with pytest.raises(ValueError, match="unitary"):
            wm.WAYModel(sz, sz, sz, 2 * I4, [1, 0])
        with pytest.raises(ValueError, match="unit"):
            wm.WAYModel(sz, sz, sz, I4, [1, 1])

    def test_degenerate(self):
        _, _, sz = pauli()
        m = wm.WAYModel(np.eye(2), sz, sz, np.eye(4), [1, 0])
        with pytest.raises(wm.DegenerateObservableError):
            wm.outcome_states(m)

    def test_uncoupled_states_identical(self):
        sx, _, sz = pauli()
        V = expm(-0.4j * sz)
        m = wm.uncoupled_model(sz, sx, sz, V, np.array([1, 1]) / math.sqrt(2))
        st = wm.outcome_states(m)
        assert all(s.fidelity == pytest.approx(1.0, abs=1e-14) for s in st.values())
        assert wm.outcome_overlaps(st)[0, 1] == pytest.approx(1.0, abs=1e-14)
        assert wm.conservation_residual(m.U, m.Gamma) < 1e-14

    def test_controlled_shift(self):
        m = wm.controlled_shift_model(8)
        st = wm.outcome_states(m)
        assert all(s.fidelity == pytest.approx(1.0, abs=1e-14) for s in st.values())
        assert wm.outcome_overlaps(st)[0, 1] < 1e-14
        assert wm.conservation_residual(m.U, m.Gamma) < 1e-12
        assert wm.commutator_obstruction(m.M, m.Gamma_S) == 0

    def test_shift_generator(self):
        n = 6
        K = wm.shift_generator(n)
        assert np.allclose(expm(-2j * math.pi * K / n), wm.shift_operator(n), atol=1e-13)

    def test_distorting(self):
        sx, _, sz = pauli()
        # swap on S (x) A sends |m>|0> off the |m> line for one eigenvector
        swap = np.eye(4)[[0, 2, 1, 3]]
        m = wm.WAYModel(sz, sz, sz, swap, [1, 0])
        with pytest.raises(wm.DistortingMeasurementError) as info:
            wm.outcome_states(m)
        assert min(info.value.fidelities) == pytest.approx(0.0, abs=1e-15)

    def test_gamma_moment(self):
        m = wm.controlled_shift_model(8)
        assert m.gamma_a_moment(2) >= 0

    def test_json_round_trip(self):
        m = wm.controlled_shift_model(5)
        text = json.dumps(wm.model_to_json(m))
        back = wm.model_from_json(json.loads(text))
        for name in ("M", "Gamma_S", "Gamma_A", "U", "ready_state"):
            assert np.array_equal(getattr(m, name), getattr(back, name))


class TestChain:
    def _check(self, model):
        worst = 0.0
        for a in range(model.dim_s):
            for b in range(model.dim_s):
                worst = max(worst, wm.chain_identity_residual(model, a, b))
        return worst

    def test_zero_gamma(self):
        rng = np.random.default_rng(1)
        _, _, sz = pauli()
        U = np.kron(np.diag([1, 0]), wm.haar_unitary(3, rng)) + np.kron(np.diag([0, 1]), wm.haar_unitary(3, rng))
        m = wm.WAYModel(sz, np.zeros((2, 2)), np.zeros((3, 3)), U, [1, 0, 0])
        assert self._check(m) < 1e-12

    def test_controlled_shift(self):
        assert self._check(wm.controlled_shift_model(8)) < 1e-12

    def test_diagonal_terms(self):
        m = wm.controlled_shift_model(4)
        assert wm.chain_identity_residual(m, 1, 1) < 1e-14

    def test_uncoupled_noncommuting(self):
        sx, _, sz = pauli()
        m = wm.uncoupled_model(sz, sx, np.diag([0.0, 1.0, 2.0]), np.eye(3), [1, 0, 0])
        assert wm.commutator_obstruction(m.M, m.Gamma_S) == pytest.approx(0.5)
        assert self._check(m) < 1e-12

    def test_preconditions(self):
        _, _, sz = pauli()
        rng = np.random.default_rng(2)
        m = wm.WAYModel(sz, sz, np.diag([0.0, 1.0]), wm.haar_unitary(4, rng), [1, 0])
        with pytest.raises(wm.PreconditionsUnmet) as info:
            wm.chain_identity_residual(m, 0, 1)
        assert info.value.residuals["conservation"] > 1e-9

    @pytest.mark.parametrize("mode", ["controlled", "noncommuting", "uncoupled"])
    def test_generated(self, mode):
        for i in range(10):
            m = search.generate(mode, np.random.default_rng([7, i]))
            try:
                assert self._check(m) < 1e-9
            except wm.PreconditionsUnmet:
                assert mode == "noncommuting"


class TestSearch:
    def test_modes(self):
        rep = search.counterexample_search(80, seed=11)
        assert rep.models == 80 and not rep.counterexamples
        assert rep.by_mode["controlled"]["all_three"] == 20
        assert rep.by_mode["uncoupled"]["conserving"] == 20
        assert rep.by_mode["uncoupled"]["orthogonal"] == 0
        assert rep.max_obstruction_all_three < 1e-6

    def test_deterministic(self):
        a = search.counterexample_search(12, seed=3)
        b = search.counterexample_search(12, seed=3)
        assert a.by_mode == b.by_mode

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            search.generate("nope", np.random.default_rng(0))

    def test_counterexample_flag(self):
        v = search.ModelVerdict("x", 2, 2, True, True, True, 0.5)
        assert v.counterexample


class TestSweep:
    def test_gradient(self):
        fam = sweep.SpinConservingFamily(1.5)
        theta = np.random.default_rng(0).normal(size=fam.n_params)
        _, J = fam.jacobian(theta)
        h = 1e-6
        for k in range(0, fam.n_params, 3):
            e = np.zeros(fam.n_params)
            e[k] = h
            fd = (fam.forward(theta + e)[0] - fam.forward(theta - e)[0]) / (2 * h)
            assert np.allclose(J[:, k], fd, atol=1e-7)

    def test_small_sweep(self):
        rows = sweep.nonideality_sweep([0, 0.5, 1.0, 1.5], seed=0, restarts=4)
        eps = [r.epsilon for r in rows]
        assert eps[0] == 1.0 and rows[0].status == "exact"
        assert all(e > 0 for e in eps)
        assert all(b <= a + 1e-9 for a, b in zip(eps, eps[1:]))
        assert eps[1] == pytest.approx(1 / 3, abs=1e-6)
        for r in rows[1:]:
            assert r.status == sweep.STATUS
            assert r.conservation_residual < 1e-12

    def test_csv_and_slope(self):
        rows = sweep.nonideality_sweep([0.5, 1.0], restarts=2)
        buf = io.StringIO()
        sweep.sweep_to_csv(rows, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "j,dim,gamma2_mean,epsilon,optimizer_status"
        assert len(lines) == 3
        assert math.isfinite(sweep.scaling_slope(rows))
        assert math.isnan(sweep.scaling_slope(rows[:1]))
