import numpy as np
import pytest

from conftest import random_feasible_weights, random_fusion_problem, random_steady
from lossyfusion import numerics
from lossyfusion.errors import InfeasibleError, InvalidInputError, ModelInconsistencyError
from lossyfusion.fusion import (
    ClosedFormSolver,
    FusionProblem,
    SigmaAssembler,
    assemble_sigma,
    enforce_psd,
    fuse,
    gauss_markov_mvue,
    individual_cov,
    pairwise_cov,
    solve_weights,
    solve_weights_closed_form,
    solve_weights_kkt,
    stack_bases,
)
from lossyfusion.linmodel import ProcessModel, SensorModel
from lossyfusion.riccati import solve_steady_state


def single_full_sensor():
    proc = ProcessModel(A=[[1.1, 0.2], [0.0, 0.9]], Q=np.eye(2))
    return solve_steady_state(proc, [SensorModel(C=np.eye(2), R=0.5 * np.eye(2), arrival_rate=0.8)])


def test_individual_cov_examples(pendulum_steady):
    proc = ProcessModel(A=[[1.0]], Q=[[1.0]])
    st = solve_steady_state(proc, [SensorModel(C=[[1.0]], R=[[1.0]])])
    d, kf = st.decompositions[0], st.filters[0]
    assert np.array_equal(individual_cov(kf, d, 0), kf.P_bar)
    assert individual_cov(kf, d, 1)[0, 0] == pytest.approx(kf.P_bar[0, 0] + 1.0)
    d, kf = pendulum_steady.decompositions[6], pendulum_steady.filters[6]
    X = kf.P_bar
    for _ in range(3):
        X = d.A_o @ X @ d.A_o.T + d.V_o.T @ pendulum_steady.process.Q @ d.V_o
    assert np.allclose(individual_cov(kf, d, 3), X, rtol=1e-12, atol=1e-18)
    with pytest.raises(InvalidInputError):
        individual_cov(kf, d, -1)


def test_pairwise_cov_examples():
    st = random_steady(4, n=3, N=3)
    di, dj = st.decompositions[:2]
    G = st.cross[(0, 1)]
    Q = st.process.Q
    assert np.array_equal(pairwise_cov(di, dj, G, 0, 0, Q), G)
    # term-by-term oracle with explicit powers
    Ai, Aj = di.A_o, dj.A_o
    mp = np.linalg.matrix_power
    ref = mp(Ai, 2) @ G @ mp(Aj, 3).T
    for t in range(2):
        ref = ref + mp(Ai, t) @ di.V_o.T @ Q @ dj.V_o @ mp(Aj, t).T
    assert np.allclose(pairwise_cov(di, dj, G, 2, 3, Q), ref, atol=1e-12)


def test_pairwise_cov_disjoint_is_zero():
    proc = ProcessModel(A=np.diag([1.1, 0.7]), Q=np.diag([1.0, 2.0]))
    sensors = [SensorModel(C=[[1.0, 0.0]], R=[[1.0]]), SensorModel(C=[[0.0, 1.0]], R=[[0.5]])]
    st = solve_steady_state(proc, sensors)
    di, dj = st.decompositions
    assert np.allclose(pairwise_cov(di, dj, st.cross[(0, 1)], 3, 2, proc.Q), 0)
    prob = assemble_sigma(st, [0, 0])
    assert np.allclose(prob.sigma[:2, 2:], 0)


def test_assemble_single_full_sensor():
    st = single_full_sensor()
    prob = assemble_sigma(st, [0])
    d, kf = st.decompositions[0], st.filters[0]
    assert np.allclose(prob.sigma, d.V_o @ kf.P_bar @ d.V_o.T)
    assert np.allclose(prob.V_o_stacked, np.eye(2))
    w = solve_weights_kkt(prob)
    assert np.allclose(w.W, np.eye(2), atol=1e-10)
    assert w.trace_P == pytest.approx(np.trace(kf.P_bar))
    assert np.allclose(solve_weights_closed_form(prob).W, np.eye(2), atol=1e-12)


def test_pendulum_sigma_psd_and_trace(pendulum_steady):
    rng = np.random.default_rng(0)
    n = pendulum_steady.n
    for _ in range(10):
        taus = rng.integers(0, 8, pendulum_steady.N)
        prob = assemble_sigma(pendulum_steady, taus)
        S = prob.sigma
        w = np.linalg.eigvalsh(S)
        assert w[0] >= -1e-8 * w[-1]
        assert np.allclose(S, S.T)
        blocks = sum(np.trace(S[i * n : (i + 1) * n, i * n : (i + 1) * n]) for i in range(pendulum_steady.N))
        assert np.trace(S) == pytest.approx(blocks)


def test_batched_sigma_matches_blockwise(pendulum_steady):
    rng = np.random.default_rng(1)
    taus = rng.integers(0, 40, (6, pendulum_steady.N))
    batched = SigmaAssembler(pendulum_steady)(taus)
    for b in range(6):
        ref = assemble_sigma(pendulum_steady, taus[b]).sigma
        assert np.allclose(batched[b], ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


def test_taus_validated():
    st = random_steady(0, n=2, N=2)
    for bad in ([0], [0, -1], [0.5, 0]):
        with pytest.raises(InvalidInputError):
            assemble_sigma(st, bad)


def test_enforce_psd():
    S = np.diag([1.0, -1e-12])
    assert numerics.min_eig(enforce_psd(S)) >= 0
    with pytest.raises(ModelInconsistencyError):
        enforce_psd(np.diag([1.0, -1e-3]))


def test_identity_sigma_gives_min_norm_weights():
    rng = np.random.default_rng(2)
    st = random_steady(2, n=3, N=3)
    V = stack_bases(st.decompositions)
    expected = V @ np.linalg.inv(V.T @ V)
    prob = FusionProblem(V, np.eye(V.shape[0]))
    for solver in ("kkt", "closed"):
        assert np.allclose(solve_weights(prob, solver).W, expected, atol=1e-10)
    del rng


def test_zero_sigma_returns_pinv():
    st = random_steady(3)
    V = stack_bases(st.decompositions)
    prob = FusionProblem(V, np.zeros((V.shape[0],) * 2))
    W = solve_weights_closed_form(prob).W
    assert np.allclose(W, np.linalg.pinv(V.T), atol=1e-12)


def test_rank_deficient_stack_is_infeasible():
    V = np.vstack([np.diag([1.0, 0.0]), np.diag([1.0, 0.0])])
    prob = FusionProblem(V, np.eye(4))
    with pytest.raises(InfeasibleError):
        solve_weights_kkt(prob)
    with pytest.raises(InfeasibleError):
        solve_weights_closed_form(prob)
    with pytest.raises(InvalidInputError):
        solve_weights(prob, "lp")


def test_solvers_agree_unbiased_and_dual():
    for seed in range(60):
        st, prob = random_fusion_problem(seed)
        kkt = solve_weights_kkt(prob)
        cf = solve_weights_closed_form(prob)
        I = np.eye(prob.n)
        assert np.max(np.abs(kkt.W.T @ prob.V_o_stacked - I)) <= 1e-8
        assert np.max(np.abs(cf.W.T @ prob.V_o_stacked - I)) <= 1e-8
        assert abs(kkt.trace_P - cf.trace_P) <= 1e-6 * (1 + cf.trace_P)
        assert 0.5 * np.trace(kkt.multiplier) == pytest.approx(kkt.trace_P, rel=1e-6, abs=1e-9)
        assert cf.trace_P == pytest.approx(np.trace(cf.W.T @ prob.sigma @ cf.W), rel=1e-12)


def test_optimality_against_random_feasible_weights():
    rng = np.random.default_rng(3)
    for seed in range(10):
        _, prob = random_fusion_problem(seed)
        best = solve_weights_closed_form(prob).trace_P
        W = random_feasible_weights(prob.V_o_stacked, rng, 200)
        traces = np.einsum("bij,ik,bkj->b", W, prob.sigma, W)
        assert np.all(best <= traces + 1e-9 * (1 + best))


def test_closed_form_is_transposed_mvue():
    for seed in range(10):
        _, prob = random_fusion_problem(seed)
        K = gauss_markov_mvue(prob.V_o_stacked, prob.sigma)
        W = solve_weights_closed_form(prob).W
        tr_k = np.trace(K @ prob.sigma @ K.T)
        assert tr_k == pytest.approx(np.trace(W.T @ prob.sigma @ W), rel=1e-6, abs=1e-12)
        assert np.allclose(K @ prob.V_o_stacked, np.eye(prob.n), atol=1e-8)


def test_closed_form_stack_matches_single(pendulum_steady):
    V = stack_bases(pendulum_steady.decompositions)
    solver = ClosedFormSolver(V)
    taus = np.random.default_rng(4).integers(0, 6, (5, pendulum_steady.N))
    sig = SigmaAssembler(pendulum_steady)(taus)
    Ws = solver(sig)
    for b in range(5):
        assert np.allclose(Ws[b], solver(sig[b]), atol=1e-10)


def test_mvue_examples():
    rng = np.random.default_rng(5)
    H = rng.standard_normal((5, 2))
    assert np.allclose(gauss_markov_mvue(H, np.zeros((5, 5))), np.linalg.pinv(H), atol=1e-12)
    V = rng.standard_normal((3, 3))
    assert np.allclose(gauss_markov_mvue(np.eye(3), V @ V.T), np.eye(3), atol=1e-12)
    M = rng.standard_normal((5, 5))
    V = M @ M.T + 0.1 * np.eye(5)
    Vi = np.linalg.inv(V)
    gls = np.linalg.solve(H.T @ Vi @ H, H.T @ Vi)
    assert np.allclose(gauss_markov_mvue(H, V), gls, atol=1e-8)
    with pytest.raises(InfeasibleError):
        gauss_markov_mvue(np.ones((3, 2)), np.eye(3))
    with pytest.raises(InvalidInputError):
        gauss_markov_mvue(H, np.eye(4))


def test_mvue_singular_noise_minimises_variance():
    # noise confined to a subspace: any unbiased gain can do no better
    rng = np.random.default_rng(6)
    H = rng.standard_normal((6, 2))
    B = rng.standard_normal((6, 3))
    V = B @ B.T
    K = gauss_markov_mvue(H, V)
    assert np.allclose(K @ H, np.eye(2), atol=1e-10)
    Ws = random_feasible_weights(H, rng, 500)  # rows of K are columns of W
    best = np.trace(K @ V @ K.T)
    assert np.all(best <= np.einsum("bji,jk,bki->b", Ws, V, Ws) + 1e-9)


def test_fuse_examples():
    st = single_full_sensor()
    prob = assemble_sigma(st, [0])
    w = solve_weights_kkt(prob)
    chi = np.array([0.3, -1.2])
    d = st.decompositions[0]
    assert np.allclose(fuse(w, [chi], st.decompositions), d.V_o @ chi, atol=1e-10)

    st, prob = random_fusion_problem(8)
    w = solve_weights_closed_form(prob)
    x = np.random.default_rng(0).standard_normal(st.n)
    exact = [d.V_o.T @ x for d in st.decompositions]
    assert np.allclose(fuse(w, exact, st.decompositions), x, atol=1e-10)
    chis = [np.random.default_rng(i).standard_normal(d.n_o) for i, d in enumerate(st.decompositions)]
    ref = sum(w.block(i) @ d.V_o @ chis[i] for i, d in enumerate(st.decompositions))
    assert np.allclose(fuse(w, chis, st.decompositions), ref, atol=1e-12)
    with pytest.raises(InvalidInputError):
        fuse(w, chis[:-1], st.decompositions)
    with pytest.raises(InvalidInputError):
        fuse(w, [np.zeros(d.n_o + 1) for d in st.decompositions], st.decompositions)


def test_pendulum_solvers_agree(pendulum_steady):
    prob = assemble_sigma(pendulum_steady, [0] * pendulum_steady.N)
    kkt, cf = solve_weights_kkt(prob), solve_weights_closed_form(prob)
    assert kkt.trace_P == pytest.approx(cf.trace_P, rel=1e-6)
    assert np.max(np.abs(cf.W.T @ prob.V_o_stacked - np.eye(4))) <= 1e-8


def test_near_deadbeat_modes_stay_unbiased():
    # Plants with |eig(A)| down to 0.02 held for up to 5 steps give Sigma with
    # condition numbers beyond 1e12. The optimal value is then not resolved
    # in double precision and the two solvers may differ in trace, but both
    # must still return unbiased weights.
    worst = 0.0
    for seed in range(100):
        st, prob = random_fusion_problem(seed, eig_low=0.02)
        I = np.eye(prob.n)
        for w in (solve_weights_kkt(prob), solve_weights_closed_form(prob)):
            worst = max(worst, np.max(np.abs(w.W.T @ prob.V_o_stacked - I)))
        K = gauss_markov_mvue(prob.V_o_stacked, prob.sigma)
        worst = max(worst, np.max(np.abs(K @ prob.V_o_stacked - I)))
    assert worst <= 1e-8
