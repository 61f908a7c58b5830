import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphgen import diagonalizable, directed_strong, family, undirected_connected
from switchcons import numkit
from switchcons.config import reference_example
from switchcons.errors import (DefectiveMatrixError, DimensionError, InfeasibleGainError,
                               ModalFormError, NotApplicableError)
from switchcons.netgraph import Digraph, laplacian_of, spectral_summary
from switchcons.synth import (AgentModel, GainDesign, ModalForm, check_condition_fixed,
                              check_condition_switching, design_gamma_fixed, design_gamma_uniform,
                              family_lambda2, modal_decompose, phi_from_gamma, place_observer_single_output,
                              place_single_input, static_gain_controller, validate_H, validate_K)

EX = reference_example()
A = np.array(EX.model.A)
B = np.array(EX.model.B)
K = np.array(EX.gains.K)
Q = np.array(EX.model.Q)
GAMMA = np.array([2.5, 1.5])
LAMBDA2_G3 = 0.14128865019262658

seeds = st.integers(0, 2 ** 32 - 1)


@pytest.fixture
def mf():
    return modal_decompose(AgentModel(A, B), user_Q=Q)


def test_example_modal_form(mf):
    assert np.allclose(mf.S, [[0.1, 1.0], [0.0, 0.1]], atol=1e-12)
    assert mf.r == 2
    assert len(mf.jordan_blocks) == 1
    lam, size = mf.jordan_blocks[0]
    assert size == 2 and lam == pytest.approx(0.1, abs=1e-12)
    assert not mf.diagonal
    assert np.allclose(mf.Q_inv, [[-25.0, 25.0], [8.0, -10.0]], atol=1e-12)


def test_example_defective_without_basis():
    with pytest.raises(DefectiveMatrixError):
        modal_decompose(AgentModel(A, B))


def test_example_phi_and_closed_loop(mf):
    Phi = phi_from_gamma(Q, GAMMA)
    assert np.allclose(Phi, [[6.5, -5.0], [4.0, -2.5]], rtol=0, atol=1e-12)
    Acl = A + B @ K
    assert np.trace(Acl) == pytest.approx(-3.5001, abs=1e-12)
    # 1.3667 * 2.1334 + 0.0833 * 1.0134
    assert np.linalg.det(Acl) == pytest.approx(3.000134, abs=1e-12)
    hk = validate_K(AgentModel(A, B), K)
    assert hk.stable and hk.abscissa < 0


def test_example_conditions(mf):
    fam = EX.build_family()
    sw = check_condition_switching(2.5, mf, list(fam))
    assert sw.passed and not sw.vacuous
    assert sw.threshold == pytest.approx(0.1 / LAMBDA2_G3, rel=1e-10)
    assert sw.slack == pytest.approx(0.1 - 2.5 * LAMBDA2_G3, rel=1e-10)
    for lap in fam:
        permissive = check_condition_fixed(GAMMA, mf, lap, strict=False)
        strict = check_condition_fixed(GAMMA, mf, lap, strict=True)
        assert permissive.passed
        assert not strict.passed and not strict.jordan_uniform
    uniform = check_condition_fixed(np.array([1.5, 1.5]), mf, fam[0], strict=True)
    assert uniform.passed


def test_switching_threshold_is_strict(mf):
    fam = list(EX.build_family())
    at = 0.1 / family_lambda2(fam)
    assert not check_condition_switching(at * (1 - 1e-12), mf, fam).passed
    assert check_condition_switching(at * (1 + 1e-9), mf, fam).passed


def test_designed_uniform_gain_example(mf):
    fam = EX.build_family()
    gamma = design_gamma_uniform(mf, list(fam))
    assert gamma[0] == gamma[1]
    assert check_condition_switching(gamma[0], mf, list(fam)).passed
    assert check_condition_fixed(gamma, mf, fam[2], strict=True).passed


def test_stable_agent_is_vacuous():
    model = AgentModel(np.diag([-1.0, -2.0]), np.eye(2))
    mf = modal_decompose(model)
    fam = list(EX.build_family())
    assert mf.r == 0
    assert np.array_equal(design_gamma_uniform(mf, fam), [1.0, 1.0])
    assert check_condition_switching(1.0, mf, fam).vacuous


def test_disconnected_graph_is_infeasible(mf):
    bad = laplacian_of(Digraph.from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)], name="split"))
    with pytest.raises(InfeasibleGainError, match="split"):
        design_gamma_fixed(mf, bad)
    rep = check_condition_fixed(GAMMA, mf, bad, strict=False)
    assert not rep.passed


def test_switching_rejects_directed(mf):
    rng = np.random.default_rng(0)
    with pytest.raises(NotApplicableError):
        check_condition_switching(1.0, mf, [directed_strong(rng, 4)])


@settings(max_examples=50, deadline=None)
@given(seed=seeds, n=st.integers(1, 4), m=st.integers(2, 6))
def test_fixed_design_satisfies_condition_and_boundary_fails(seed, n, m):
    rng = np.random.default_rng(seed)
    Amat, Qm, vals = diagonalizable(rng, n, low=-1.0, high=1.0)
    mf = modal_decompose(AgentModel(Amat, np.eye(n)), user_Q=Qm)
    lap = undirected_connected(rng, m)
    gamma = design_gamma_fixed(mf, lap, margin=0.1)
    assert check_condition_fixed(gamma, mf, lap).passed
    lam2 = spectral_summary(lap).algebraic_connectivity
    for i in range(mf.r):
        if mf.S_diag[i].real > 0:
            at = gamma.copy()
            at[i] = mf.S_diag[i].real / lam2
            assert not check_condition_fixed(at, mf, lap).modes[i].passed


@settings(max_examples=50, deadline=None)
@given(seed=seeds, n=st.integers(1, 5))
def test_modal_decompose_reconstructs(seed, n):
    rng = np.random.default_rng(seed)
    Amat = rng.normal(size=(n, n))
    mf = modal_decompose(AgentModel(Amat, np.eye(n)))
    assert np.allclose(mf.Q @ mf.S @ mf.Q_inv, Amat, atol=1e-8 * max(1.0, np.abs(Amat).max()))
    re = mf.S_diag.real
    assert np.all(np.diff(re) <= 1e-9)
    assert mf.r == int(np.sum(re > -1e-12))


@settings(max_examples=50, deadline=None)
@given(seed=seeds, n=st.integers(1, 5))
def test_phi_intertwines_gains(seed, n):
    rng = np.random.default_rng(seed)
    Qm = rng.normal(size=(n, n)) + 2 * np.eye(n)
    gamma = rng.uniform(0.1, 5.0, n)
    Phi = phi_from_gamma(Qm, gamma)
    assert np.allclose(Phi @ Qm, Qm * gamma, atol=1e-9 * max(1.0, np.abs(Qm).max() * gamma.max()))


def test_phi_real_for_conjugate_gains():
    Amat = np.array([[0.0, 1.0], [-1.0, 0.0]])
    mf = modal_decompose(AgentModel(Amat, np.eye(2)))
    assert np.iscomplexobj(mf.Q)
    Phi = phi_from_gamma(mf.Q, np.array([2.0, 2.0]))
    assert not np.iscomplexobj(Phi)
    assert np.allclose(Phi, 2 * np.eye(2))


def test_user_basis_must_reduce():
    with pytest.raises(ModalFormError):
        modal_decompose(AgentModel(A, B), user_Q=np.eye(2))
    with pytest.raises(DimensionError):
        modal_decompose(AgentModel(A, B), user_Q=np.eye(3))


def test_user_basis_blocks_reordered():
    Amat = np.diag([-1.0, 2.0, 0.5])
    mf = modal_decompose(AgentModel(Amat, np.eye(3)), user_Q=np.eye(3))
    assert np.allclose(mf.S_diag.real, [2.0, 0.5, -1.0])
    assert np.allclose(mf.Q @ mf.S @ mf.Q_inv, Amat)


def test_from_jordan_structure():
    mf = ModalForm.from_jordan([(0.2, 2), (-1.0, 1)])
    assert mf.block_sizes == (2, 1)
    assert mf.S[0, 1] == 1.0 and mf.S[1, 2] == 0.0
    assert mf.r == 2
    assert np.array_equal(mf.block_constant_S, np.diag([0.2, 0.2, -1.0]))


def test_agent_model_validation():
    with pytest.raises(DimensionError):
        AgentModel(np.eye(2), np.ones((3, 1)))
    with pytest.raises(DimensionError):
        AgentModel(np.eye(2), np.ones((2, 1)), C=np.ones((1, 3)))


def test_stabilizability():
    assert AgentModel(A, B).is_stabilizable()
    # unstable mode not reachable from the input
    assert not AgentModel(np.diag([1.0, -1.0]), np.array([[0.0], [1.0]])).is_stabilizable()
    # uncontrollable but stable mode is fine
    assert AgentModel(np.diag([-1.0, 1.0]), np.array([[0.0], [1.0]])).is_stabilizable()
    with pytest.raises(NotApplicableError):
        AgentModel(A, B).is_detectable()
    assert AgentModel(A, B, C=np.array([[1.0, 0.0]])).is_detectable()


def test_pole_placement_and_observer():
    poles = np.array([-1.0, -2.0])
    Kp = place_single_input(A, B, poles)
    assert np.allclose(np.sort(np.linalg.eigvals(A + B @ Kp).real), [-2.0, -1.0], atol=1e-8)
    assert validate_K(AgentModel(A, B), Kp).stable
    C = np.array([[1.0, 0.0]])
    H = place_observer_single_output(A, C, poles)
    assert np.allclose(np.sort(np.linalg.eigvals(A + H @ C).real), [-2.0, -1.0], atol=1e-8)
    assert validate_H(AgentModel(A, B, C), H).stable
    with pytest.raises(NotApplicableError):
        place_single_input(np.diag([1.0, 2.0]), np.array([[1.0], [0.0]]), poles)


def test_static_gain_controller():
    Phi = phi_from_gamma(Q, GAMMA)
    F = static_gain_controller(AgentModel(A, np.eye(2)), Phi)
    assert np.allclose(F, Phi)
    with pytest.raises(NotApplicableError):
        static_gain_controller(AgentModel(A, B), Phi)


def test_gain_design_container(mf):
    d = GainDesign.from_gammas(mf, GAMMA, K=K)
    assert np.allclose(d.Phi, [[6.5, -5.0], [4.0, -2.5]])
    assert d.K.shape == (1, 2) and d.H is None


def test_family_lambda2_empty():
    with pytest.raises(ValueError):
        family_lambda2([])


def test_uniform_design_uses_worst_member():
    rng = np.random.default_rng(3)
    fam = list(family(rng, 5, 3))
    mf = ModalForm.from_jordan([(0.4, 1), (-0.5, 1)])
    gamma = design_gamma_uniform(mf, fam, margin=0.25)
    worst = min(spectral_summary(l).algebraic_connectivity for l in fam)
    assert gamma[0] == pytest.approx((0.4 / worst) * 1.25 + 0.25)
    assert gamma[1] == 1.0
