import numpy as np
import pytest

from oracles import propagator_taylor
from refsys.branching import BranchTree, path_component, split
from refsys.consistency import decoherence_matrix
from refsys.dynamics import Tolerances
from refsys.errors import ValidationError
from refsys.two_level import (
    GUE_SPACING_RATIO,
    TwoLevelScenario,
    analytic_branch,
    build_env,
    d_phi,
    daa_model,
    level_spacing_ratio,
    make_scenario,
    peres_fidelity,
    tau_policy,
)

LOOSE = Tolerances(eps_r=1.0)


def _phi0(dim, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _two_split_tree(sc, psi0):
    (t0, _), (t1, _) = sc.windows
    tree = BranchTree(sc.system(), psi0, t0)
    split(tree, 0, t0, sc.division, LOOSE)
    for leaf in list(tree.leaves):
        split(tree, leaf.path, t1, sc.division, LOOSE)
    return tree


def test_gue_env_is_hermitian_and_seeded():
    a = build_env("gue", 64, 2.0, seed=3)
    assert np.allclose(a, a.conj().T)
    assert np.array_equal(a, build_env("gue", 64, 2.0, seed=3))
    assert not np.array_equal(a, build_env("gue", 64, 2.0, seed=4))


def test_gue_semicircle_radius():
    w = np.linalg.eigvalsh(build_env("gue", 512, 1.5, seed=1))
    assert abs(w.max() - 1.5) < 0.1 and abs(w.min() + 1.5) < 0.1


def test_gue_level_spacing_ratio():
    w = np.linalg.eigvalsh(build_env("gue", 512, 1.0, seed=7))
    assert abs(level_spacing_ratio(w) - GUE_SPACING_RATIO) < 0.03


def test_poisson_spacing_ratio_is_lower():
    # independent levels give 2 ln 2 - 1 ~ 0.386
    w = np.random.default_rng(0).uniform(0, 1, 4000)
    assert abs(level_spacing_ratio(w) - (2 * np.log(2) - 1)) < 0.02


def test_spin_chain_env():
    h = build_env("spin-chain", 16, 1.0, seed=0)
    assert np.allclose(h, h.conj().T)
    with pytest.raises(ValidationError):
        build_env("spin-chain", 12)
    with pytest.raises(ValidationError):
        build_env("laser", 8)


def test_scenario_window_order():
    with pytest.raises(ValidationError):
        make_scenario(8, windows=((0, 5), (4, 9)))
    with pytest.raises(ValidationError):
        make_scenario(8, off="other")


def test_window_blocks_do_not_mix_levels():
    sc = make_scenario(8, seed=1)
    h = sc.window_system().hamiltonian
    assert np.allclose(h[:8, 8:], 0)
    mix = sc.mixing_system().hamiltonian
    assert np.allclose(mix[:8, 8:], sc.g * np.eye(8))


def test_analytic_branch_matches_tree(rng):
    sc = make_scenario(32, seed=5, windows=((0, 3), (4, 7)), g=0.8, off="random")
    psi0 = sc.initial_state(np.array([0.6, 0.8]), _phi0(32))
    tree = _two_split_tree(sc, psi0)
    for t in (4.0, 5.5, 7.0):
        for leaf in tree.leaves:
            m = tuple(int(s.m) for s in leaf.path.steps)
            got = path_component(tree, leaf.path, t)
            assert np.max(np.abs(got - analytic_branch(sc, psi0, m, t))) < 1e-12


def test_analytic_branch_against_taylor_propagators():
    sc = make_scenario(6, seed=2, windows=((0, 1), (1.5, 2.5)))
    psi0 = sc.initial_state(np.array([1.0, 0.0]), _phi0(6))
    p = [np.kron(np.diag(np.eye(2)[k]), np.eye(6)) for k in range(2)]
    win, mix = sc.window_system().hamiltonian, sc.mixing_system().hamiltonian
    v = propagator_taylor(win, 1.0) @ (p[0] @ psi0)
    v = propagator_taylor(mix, 0.5) @ v
    v = propagator_taylor(win, 0.7) @ (p[1] @ v)
    assert np.max(np.abs(v - analytic_branch(sc, psi0, (1, 2), 2.2))) < 1e-11


def test_daa_model_matches_decoherence_matrix():
    sc = make_scenario(32, seed=9, windows=((0, 3), (4, 7)), g=0.8, off="random")
    psi0 = sc.initial_state(np.array([0.6, 0.8]), _phi0(32, 1))
    tree = _two_split_tree(sc, psi0)
    tree.advance(6.0)
    dm = decoherence_matrix(tree, sc.division)
    paths = [tuple(int(s.m) for s in leaf.path.steps) for leaf in tree.leaves]
    for m in (1, 2):
        for a, pa in enumerate(paths):
            for b, pb in enumerate(paths):
                assert abs(dm[str(m)][a, b] - daa_model(sc, psi0, pa, pb, m, 6.0)) < 1e-12


def test_d_phi_outside_second_window():
    sc = make_scenario(8)
    with pytest.raises(ValidationError):
        d_phi(sc, sc.initial_state([1, 0], _phi0(8)), 1, 2, 1, 5.0)


def test_environment_overlap_near_random_floor():
    # the two histories ending in the same level leave nearly orthogonal environment states
    dim = 128
    ratios = []
    for seed in range(5):
        sc = make_scenario(dim, seed=seed)
        psi0 = sc.initial_state(np.array([1.0, 1.0]) / np.sqrt(2), _phi0(dim, seed))
        t = sc.windows[1][1]
        for m in (1, 2):
            d = d_phi(sc, psi0, 1, 2, m, t)
            n1 = abs(d_phi(sc, psi0, 1, 1, m, t))
            n2 = abs(d_phi(sc, psi0, 2, 2, m, t))
            ratios.append(abs(d) / np.sqrt(n1 * n2))
    assert np.median(ratios) < 3 / np.sqrt(dim)


def test_peres_no_decay_for_identical_hamiltonians():
    h = build_env("gue", 16, 1.0, 0)
    fit = peres_fidelity(h, h, _phi0(16), np.linspace(0, 10, 50))
    assert fit.tau_d is None and not fit.decayed
    with pytest.raises(ValidationError):
        tau_policy(fit)


def test_peres_echo_matches_taylor():
    h0 = build_env("gue", 8, 1.0, 0)
    h = h0 + build_env("gue", 8, 0.5, 1)
    psi = _phi0(8)
    grid = np.linspace(0, 3, 7)
    fit = peres_fidelity(h0, h, psi, grid)
    for t, m in zip(grid, fit.m):
        ref = abs(np.vdot(propagator_taylor(h, t) @ psi, propagator_taylor(h0, t) @ psi)) ** 2
        assert m == pytest.approx(ref, abs=1e-12)


def test_peres_recovers_exponential_decay():
    sc = make_scenario(512, seed=0, coupling=1.0)
    h0 = sc.h_e
    h = sc.h_e + sc.h_ie[0]
    fit = peres_fidelity(h0, h, _phi0(512), np.linspace(0, 10, 101))
    assert fit.decayed and fit.r2 >= 0.95
    assert 0.3 < fit.tau_d < 3.0
    assert tau_policy(fit) == pytest.approx(10 * fit.tau_d)


def test_tau_policy_validation():
    assert tau_policy(0.5, 4) == 2.0
    with pytest.raises(ValidationError):
        tau_policy(0.5, 1.0)
    with pytest.raises(ValidationError):
        tau_policy(-1.0)


def test_scenario_dataclass_direct():
    h = np.eye(4)
    sc = TwoLevelScenario((0.0, 2.0), h, (h, 2 * h), ((0, 1), (2, 3)))
    assert sc.dim == 8 and sc.division.labels == ("1", "2")
