import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.random import default_rng

from ldscheme.errors import SimulationBlowup
from ldscheme.kernel import affine_model, gaussian_base, linear_drift, preset_model, zero_drift
from ldscheme.scheme import (
    DualMeasure,
    SchemeRun,
    Trajectory,
    basis_phi,
    coupled_perturbation_gap,
    coupled_perturbation_gaps,
    dual_pairing,
    eval_path,
    eval_path_many,
    gauss_legendre_01,
    load_trajectory,
    modulus,
    phi_limit,
    phi_n,
    replica_rng,
    resample,
    save_trajectory,
    simulate,
    simulate_batch,
)


def test_gauss_legendre_weights():
    nodes, weights = gauss_legendre_01(5)
    assert weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all((nodes > 0) & (nodes < 1))
    # order 5 integrates degree-9 polynomials exactly
    assert weights @ nodes**9 == pytest.approx(0.1, abs=1e-14)


def test_trajectory_validation():
    t = Trajectory([0.0, 0.5, 1.0])
    assert t.knots.shape == (3, 1)
    assert t.n == 2
    assert np.allclose(t.times, [0.0, 0.5, 1.0])
    with pytest.raises(ValueError):
        Trajectory(np.array([1.0]))


def test_basis_phi_ramp():
    # ramp i covers ((i-1)/n, i/n] and saturates afterwards
    assert basis_phi(4, 2, 0.25) == 0.0
    assert basis_phi(4, 2, 0.375) == pytest.approx(0.5)
    assert basis_phi(4, 2, 0.5) == 1.0
    assert basis_phi(4, 2, 1.0) == 1.0
    with pytest.raises(ValueError):
        basis_phi(4, 0, 0.5)
    with pytest.raises(ValueError):
        basis_phi(4, 5, 0.5)


def test_eval_path_reproduces_every_knot():
    rng = default_rng(5)
    for n in [1, 2, 3, 7, 29, 40, 49, 58]:
        traj = Trajectory(rng.normal(size=(n + 1, 2)))
        for k in range(n + 1):
            assert np.array_equal(eval_path(traj, k / n), traj.knots[k]), (n, k)


def test_eval_path_interpolates():
    traj = Trajectory(np.array([[0.0], [1.0], [0.0]]))
    assert eval_path(traj, 0.25)[0] == pytest.approx(0.5)
    assert eval_path(traj, 0.75)[0] == pytest.approx(0.5)


def test_eval_path_many_matches_scalar():
    rng = default_rng(8)
    traj = Trajectory(rng.normal(size=(11, 3)))
    ts = rng.uniform(0, 1, size=40)
    many = eval_path_many(traj, ts)
    for i, t in enumerate(ts):
        assert np.allclose(many[i], eval_path(traj, t), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(t=st.floats(0, 1), seed=st.integers(0, 10_000))
def test_eval_path_stays_in_hull(t, seed):
    traj = Trajectory(default_rng(seed).normal(size=(6, 1)))
    v = eval_path(traj, t)[0]
    assert traj.knots.min() - 1e-12 <= v <= traj.knots.max() + 1e-12


def test_resample_nested_lattice_exact():
    rng = default_rng(2)
    coarse = Trajectory(rng.normal(size=(11, 1)))
    fine = resample(coarse, 50)
    assert fine.n == 50
    for k in range(11):
        assert np.allclose(fine.knots[5 * k], coarse.knots[k], atol=1e-15)
    # the refined path is the same function
    ts = rng.uniform(0, 1, 30)
    assert np.allclose(eval_path_many(fine, ts), eval_path_many(coarse, ts), atol=1e-12)


def test_modulus_piecewise_linear_exact():
    traj = Trajectory(np.array([[0.0], [1.0], [0.0], [2.0], [2.0]]))
    delta = 0.25
    dense = np.linspace(0, 1, 2001)
    vals = eval_path_many(traj, dense)[:, 0]
    brute = 0.0
    for i, s in enumerate(dense):
        mask = np.abs(dense - s) <= delta + 1e-12
        brute = max(brute, np.max(np.abs(vals[mask] - vals[i])))
    assert modulus(traj, delta) == pytest.approx(brute, abs=1e-9)


def test_dual_measure_basics():
    lam = DualMeasure.from_atoms([(1.0, [2.0]), (0.25, [-1.0])])
    assert np.allclose(lam.times, [0.25, 1.0])
    assert np.allclose(lam.total_mass(), [1.0])
    assert lam.variation() == pytest.approx(3.0)
    assert np.allclose(lam.tail(0.25), [1.0])
    assert np.allclose(lam.tail(0.250001), [2.0])
    assert np.allclose(lam.scaled(2.0).weights, 2.0 * lam.weights)
    rt = DualMeasure.from_records(lam.to_records(), 1)
    assert np.allclose(rt.times, lam.times)
    assert np.allclose(rt.weights, lam.weights)


def test_dual_measure_validation():
    with pytest.raises(ValueError):
        DualMeasure(np.array([1.5]), np.array([[1.0]]))
    with pytest.raises(ValueError):
        DualMeasure(np.array([0.5]), np.array([[np.inf]]))
    z = DualMeasure.zero(3)
    assert z.variation() == 0.0
    assert np.allclose(z.total_mass(), np.zeros(3))


def test_basis_integrals_against_direct_sum():
    lam = DualMeasure.from_atoms([(0.3, [1.0]), (0.8, [-2.0]), (1.0, [0.5])])
    n = 5
    out = lam.basis_integrals(n)
    for i in range(1, n + 1):
        direct = sum(w[0] * basis_phi(n, i, t) for t, w in zip(lam.times, lam.weights))
        assert out[i - 1, 0] == pytest.approx(direct, abs=1e-14)


def test_simulate_seeded_and_shapes():
    m = preset_model("gaussian-ou")
    run = SchemeRun(model=m, x=[1.0], n=30, a=0.25, seed=4)
    t1, t2 = simulate(run), simulate(run)
    assert np.array_equal(t1.knots, t2.knots)
    assert t1.knots.shape == (31, 1)
    assert t1.knots[0, 0] == 1.0


def test_draw_discipline_interleaves_model_and_smoothing_noise():
    # replay the stream by hand: each step draws the model increment first,
    # then the smoothing gaussian, even when a = 0
    m = preset_model("gaussian-free")
    n, seed = 12, 99
    for a in [0.0, 0.5]:
        rng = replica_rng(seed, 0)
        state = np.zeros(1)
        expect = [state.copy()]
        for _ in range(n):
            z = m.base.sample(rng, 1)
            g = rng.standard_normal(1)
            state = state + (z + a * g) / n
            expect.append(state.copy())
        traj = simulate(SchemeRun(model=m, x=[0.0], n=n, a=a, seed=seed))
        assert np.array_equal(traj.knots, np.array(expect))


def test_smoothing_changes_path_but_shares_model_draws():
    m = preset_model("gaussian-free")
    t0 = simulate(SchemeRun(model=m, x=[0.0], n=20, a=0.0, seed=1))
    t1 = simulate(SchemeRun(model=m, x=[0.0], n=20, a=0.5, seed=1))
    assert not np.array_equal(t0.knots, t1.knots)
    # shared draws mean the gap is the smoothing term alone: replay g
    rng = replica_rng(1, 0)
    gs = []
    for _ in range(20):
        m.base.sample(rng, 1)
        gs.append(rng.standard_normal(1))
    gap = t1.knots - t0.knots
    assert np.allclose(gap[1:], 0.5 / 20 * np.cumsum(gs, axis=0), atol=1e-15)


def test_simulate_batch_first_replica_matches_scalar():
    m = preset_model("gaussian-ou")
    out = simulate_batch(m, [1.0], 25, 0.5, 1, replica_rng(6, 0))
    ref = simulate(SchemeRun(model=m, x=[1.0], n=25, a=0.5, seed=6), rng=replica_rng(6, 0))
    assert np.array_equal(out[0], ref.knots)
    big = simulate_batch(m, [1.0], 25, 0.5, 7, replica_rng(6, 0))
    assert big.shape == (7, 26, 1)
    again = simulate_batch(m, [1.0], 25, 0.5, 7, replica_rng(6, 0))
    assert np.array_equal(big, again)


def test_simulate_blowup_raises_with_step():
    m = preset_model("logistic")
    with pytest.raises(SimulationBlowup) as exc:
        simulate(SchemeRun(model=m, x=[1e8], n=12, a=0.0, seed=0))
    assert exc.value.step >= 1


def test_dual_pairing_point_masses():
    traj = Trajectory(np.array([[0.0], [2.0]]))
    lam = DualMeasure.from_atoms([(0.5, [3.0]), (1.0, [1.0])])
    assert dual_pairing(traj, lam) == pytest.approx(3.0 * 1.0 + 1.0 * 2.0)


def test_phi_n_free_gaussian_closed_form():
    # b=0, sigma=1: phi_n = x lam_tot + sum_i |beta_i/n|^2 / 2
    m = preset_model("gaussian-free")
    traj = Trajectory(np.zeros((11, 1)))
    lam = DualMeasure.point_mass(1.0, 0.8)
    n = 10
    beta = lam.basis_integrals(n) / n
    expect = float(np.sum(beta**2) / 2)
    assert phi_n(m, [0.0], 0.0, traj, lam) == pytest.approx(expect, abs=1e-13)
    # smoothing adds a^2 |beta/n|^2 / 2 per step
    expect_a = expect + 0.25 * float(np.sum(beta**2) / 2)
    assert phi_n(m, [0.0], 0.5, traj, lam) == pytest.approx(expect_a, abs=1e-13)


def test_phi_n_martingale_exponent_deterministic_model():
    # sigma = 0: exp(<Y, lam> - phi_n) = 1 for every path the scheme can make
    det = affine_model(1, linear_drift(np.array([[-1.0]])), 0.0, gaussian_base(), summary="det")
    traj = simulate(SchemeRun(model=det, x=[1.0], n=17, a=0.0, seed=0))
    lam = DualMeasure.from_atoms([(0.3, [0.4]), (1.0, [-0.9])])
    assert dual_pairing(traj, lam) - phi_n(det, [1.0], 0.0, traj, lam) == pytest.approx(0.0, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(
    ts=st.lists(st.floats(0, 1), min_size=1, max_size=4),
    ws=st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4),
    seed=st.integers(0, 1000),
)
def test_phi_n_martingale_exponent_property(ts, ws, seed):
    det = affine_model(1, linear_drift(np.array([[-0.7]])), 0.0, gaussian_base(), summary="det")
    lam = DualMeasure.from_atoms([(t, [w]) for t, w in zip(ts, ws)])
    traj = simulate(SchemeRun(model=det, x=[0.8], n=9, a=0.0, seed=seed))
    assert dual_pairing(traj, lam) - phi_n(det, [0.8], 0.0, traj, lam) == pytest.approx(0.0, abs=1e-10)


def test_phi_limit_free_gaussian_terminal_atom():
    m = preset_model("gaussian-free")
    f = Trajectory(np.zeros((21, 1)))
    lam = DualMeasure.point_mass(1.0, 0.8)
    # <x, lam> + int_0^1 (0.8)^2/2 ds
    assert phi_limit(m, [0.5], 0.0, f, lam) == pytest.approx(0.5 * 0.8 + 0.32, abs=1e-12)
    # interior atom: the tail vanishes past it
    lam_half = DualMeasure.point_mass(0.5, 0.8)
    assert phi_limit(m, [0.5], 0.0, f, lam_half) == pytest.approx(0.5 * 0.8 + 0.16, abs=1e-12)


def test_phi_limit_ou_against_closed_form():
    from ldscheme.action import limit_ode

    m = preset_model("gaussian-ou")
    f = limit_ode(m, [1.0], steps=2000)
    alpha = 0.6
    lam = DualMeasure.point_mass(1.0, alpha)
    # cgf(f(s), alpha) = -alpha e^{-s} + alpha^2/2 along the flow
    expect = 1.0 * alpha + (-alpha * (1 - np.exp(-1.0)) + 0.5 * alpha**2)
    assert phi_limit(m, [1.0], 0.0, f, lam) == pytest.approx(expect, abs=1e-7)


def test_coupling_gap_bound_holds_per_realization():
    m = preset_model("gaussian-ou")
    gaps, bounds = coupled_perturbation_gaps(m, [1.0], 50, 0.5, seed=3, realizations=200)
    assert gaps.shape == bounds.shape == (200,)
    assert np.all(gaps <= bounds + 1e-12)
    assert np.all(gaps > 0)


def test_coupling_gap_linear_in_amplitude_for_linear_drift():
    m = preset_model("gaussian-ou")
    g1, _ = coupled_perturbation_gaps(m, [1.0], 40, 0.5, seed=9, realizations=50)
    g2, _ = coupled_perturbation_gaps(m, [1.0], 40, 0.25, seed=9, realizations=50)
    assert np.allclose(g1, 2.0 * g2, rtol=1e-9)


def test_coupling_gap_scalar_wrapper():
    m = preset_model("gaussian-ou")
    gap, bound = coupled_perturbation_gap(m, [1.0], 30, 0.5, seed=2)
    assert 0 < gap <= bound


def test_coupling_rejects_non_affine():
    src = preset_model("gaussian-free")
    from ldscheme.kernel import KernelModel

    plain = KernelModel(dim=1, sampler=src.sampler, cgf=src.cgf, cgf_grad=src.cgf_grad, summary="plain")
    with pytest.raises(TypeError):
        coupled_perturbation_gaps(plain, [0.0], 10, 0.5, seed=0, realizations=3)


def test_save_load_roundtrip(tmp_path):
    rng = default_rng(12)
    traj = Trajectory(rng.normal(size=(9, 2)))
    path = tmp_path / "traj.csv"
    save_trajectory(traj, path)
    back = load_trajectory(path)
    assert np.array_equal(back.knots, traj.knots)
    header = path.read_text().splitlines()[0]
    assert header == "t,x1,x2"


def test_load_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time,x1\n0.0,1.0\n1.0,2.0\n")
    with pytest.raises(ValueError):
        load_trajectory(p)
    p2 = tmp_path / "nonuniform.csv"
    p2.write_text("t,x1\n0.0,1.0\n0.3,2.0\n1.0,3.0\n")
    with pytest.raises(ValueError):
        load_trajectory(p2)
