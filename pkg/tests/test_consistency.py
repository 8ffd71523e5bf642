import numpy as np
import pytest

from oracles import propagator_taylor, random_hermitian, random_projector, random_unit
from refsys.branching import BranchTree, grow_tree, phase_recombination, split
from refsys.consistency import (
    allowed_region_test,
    check_principle,
    chi_consistency,
    chi_functional,
    chi_matrix,
    decoherence_matrix,
    nested_prediction_check,
    normalized_offdiag,
    path_chains,
    reversed_system,
    time_reversed_vector,
)
from refsys.divisions import basis_division, explicit_division, lift
from refsys.dynamics import Tolerances, TotalSystem, evolve
from refsys.errors import DimensionError, UndefinedConditionError, ValidationError
from refsys.linalg import PAULI_X

X_DIV = explicit_division("x", {"+": 0.5 * np.array([[1, 1], [1, 1]]),
                                "-": 0.5 * np.array([[1, -1], [-1, 1]])})


def _recording_system(dim_e=4, strength=3.0, seed=0):
    """Each R basis state drives its own environment Hamiltonian."""
    rng = np.random.default_rng(seed)
    h_i = sum(np.kron(np.diag(np.eye(2)[k]), strength * random_hermitian(rng, dim_e)) for k in range(2))
    return TotalSystem(2, dim_e, None, None, h_i)


def test_decoherence_matrix_matches_loop(rng):
    sysm = _recording_system()
    tree = BranchTree(sysm, random_unit(rng, 8))
    split(tree, 0, 0.5, basis_division("z", 2), Tolerances())
    tree.advance(1.3)
    dm = decoherence_matrix(tree, X_DIV)
    div = lift(X_DIV, 4)
    comps = [leaf.vector for leaf in tree.leaves]
    for k, mu in enumerate(div.labels):
        for a in range(len(comps)):
            for b in range(len(comps)):
                ref = np.vdot(comps[a], div.projector(mu) @ comps[b])
                assert abs(dm[mu][a, b] - ref) < 1e-13
        assert np.allclose(dm[mu], dm[mu].conj().T)
    assert np.allclose(dm.path_probabilities(), tree.probabilities())
    assert dm.to_csv().splitlines()[0] == "value,path,path_prime,re,im"


def test_decoherence_matrix_at_earlier_time(rng):
    sysm = _recording_system()
    tree = BranchTree(sysm, random_unit(rng, 8))
    split(tree, 0, 0.5, basis_division("z", 2), Tolerances())
    tree.advance(2.0)
    d_now = decoherence_matrix(tree, X_DIV).entries
    d_then = decoherence_matrix(tree, X_DIV, 1.0).entries
    assert d_now.shape == d_then.shape
    # diagonal sums are probabilities and unitary evolution keeps them
    assert np.einsum("kaa->", d_then).real == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        decoherence_matrix(tree, X_DIV, 0.1)


def test_normalized_offdiag_and_floor():
    d = np.array([[0.5, 0.1, 0.3], [0.1, 0.5, 0.0], [0.3, 0.0, 1e-14]])
    r, pair = normalized_offdiag(d)
    assert r == pytest.approx(0.2) and pair in ((0, 1), (1, 0))
    assert normalized_offdiag(np.diag([1.0, 0.0])) == (0.0, None)


def test_coherent_split_then_rotated_check_fails():
    # no environment: the two z branches stay coherent and the x check sees it
    sysm = TotalSystem(2, 1)
    tree = BranchTree(sysm, [0.6, 0.8])
    split(tree, 0, 0.0, basis_division("z", 2), Tolerances())
    v = check_principle(tree, X_DIV)
    assert v.status == "fail" and v.passed is False
    assert v.max_offdiag == pytest.approx(1.0)
    assert v.witness[0] in ("+", "-")


def test_recorded_split_passes():
    sysm = _recording_system(dim_e=64, strength=4.0)
    psi0 = np.kron([0.6, 0.8], np.eye(64)[0])
    tree = BranchTree(sysm, psi0)
    split(tree, 0, 0.0, basis_division("z", 2), Tolerances())
    # the z division itself: branches are orthogonal subspaces
    v = check_principle(tree, basis_division("z", 2), 5.0)
    assert v.status == "pass" and v.max_offdiag < 1e-12


def test_not_applicable_is_distinct():
    sysm = TotalSystem(2, 1, h_r=5 * PAULI_X)
    tree = BranchTree(sysm, [0.6, 0.8])
    v = check_principle(tree, basis_division("z", 2))
    assert v.status == "not-applicable" and v.passed is None
    assert v.as_dict()["witness"] is None


def test_check_principle_single_value_selection():
    sysm = TotalSystem(2, 1)
    tree = BranchTree(sysm, [0.6, 0.8])
    split(tree, 0, 0.0, basis_division("z", 2), Tolerances())
    v = check_principle(tree, X_DIV, mu="+")
    assert v.values == ("+",)


def test_allowed_region_product_passes_and_coherent_fails():
    still = TotalSystem(2, 1)
    # the z split followed by the x check always fails without an environment
    res = allowed_region_test(still, [0.6, 0.8], [basis_division("z", 2), X_DIV], [0.0, 1.0])
    assert not res.passed
    assert res.first_violation["status"] == "fail"
    rec = _recording_system()
    ok = allowed_region_test(rec, np.kron([0.6, 0.8], np.eye(4)[0]), [basis_division("z", 2)],
                             [0.0, 0.5, 1.0])
    assert ok.passed and ok.n_checks >= 6


def test_time_reversed_vector_roundtrip(rng):
    sysm = _recording_system()
    psi0 = np.kron([0.6, 0.8], np.eye(4)[0])
    psi_t = time_reversed_vector(sysm, psi0, 0.0, 3.0, basis_division("z", 2))
    back = evolve(reversed_system(sysm, 3.0), psi_t, 0.0, 3.0)
    assert np.allclose(back, psi0, atol=1e-12)


def test_time_reversed_vector_requires_spread():
    sysm = _recording_system()
    with pytest.raises(ValidationError, match="occupies only 1"):
        time_reversed_vector(sysm, np.kron([1, 0], np.eye(4)[0]), 0, 2, basis_division("z", 2))


def test_nested_prediction_exact(rng):
    coarse = basis_division("c", 4, [[0, 1], [2, 3]], ["a", "b"])
    fine = basis_division("f", 4)
    psi = random_unit(rng, 12)
    res = nested_prediction_check(psi, coarse, "a", fine, "2")
    assert res.residual < 1e-14
    assert res.p_mu_nu * res.p_mu == pytest.approx(res.p_nu)


def test_nested_prediction_random_subspaces(rng):
    for _ in range(5):
        big = random_projector(rng, 5, 3)
        w, v = np.linalg.eigh(big)
        small = np.outer(v[:, -1], v[:, -1].conj())
        d_mu = explicit_division("m", {"in": big, "out": np.eye(5) - big})
        d_nu = explicit_division("n", {"in": small, "out": np.eye(5) - small})
        res = nested_prediction_check(random_unit(rng, 10), d_mu, "in", d_nu, "in")
        assert res.residual < 1e-12


def test_nested_prediction_errors(rng):
    with pytest.raises(ValidationError, match="not contained"):
        nested_prediction_check(random_unit(rng, 2), basis_division("z", 2), "1", X_DIV, "+")
    with pytest.raises(UndefinedConditionError):
        nested_prediction_check([0, 1], basis_division("z", 2), "1", basis_division("w", 2), "1")
    with pytest.raises(DimensionError):
        nested_prediction_check(random_unit(rng, 3), basis_division("z", 3), "1", basis_division("w", 2), "1")


def test_nested_prediction_validity_check():
    sysm = TotalSystem(2, 1, h_r=5 * PAULI_X)
    with pytest.raises(ValidationError, match="validity"):
        nested_prediction_check([0.6, 0.8], basis_division("z", 2), "1", basis_division("w", 2), "1",
                                sysm, 0.0, Tolerances())


def _brute_chi(h, psi0, chain_a, chain_b, dim_e):
    def run(chain):
        v, cur = np.array(psi0, dtype=complex), 0.0
        for p, t in chain:
            v = propagator_taylor(h, t - cur) @ v
            if p is not None:
                v = np.kron(p, np.eye(dim_e)) @ v
            cur = t
        return v
    return np.vdot(run(chain_b), run(chain_a))


def test_chi_matches_decoherence_matrix_and_brute_force(rng):
    sysm = _recording_system(dim_e=3, strength=1.0, seed=4)
    psi0 = random_unit(rng, 6)
    tree = BranchTree(sysm, psi0)
    split(tree, 0, 0.4, basis_division("z", 2), Tolerances(eps_r=1.0))
    split(tree, 0, 1.1, X_DIV, Tolerances(eps_r=1.0))
    tree.advance(1.8)
    dm = decoherence_matrix(tree, X_DIV)
    for mu in X_DIV.labels:
        chains = path_chains(tree, X_DIV.projector_r(mu))
        x = chi_matrix(sysm, psi0, 0.0, chains)
        # D_{a a'} = chi(chain_a', chain_a)
        assert np.allclose(x.T, dm[mu], atol=1e-12)
        for a in range(len(chains)):
            for b in range(len(chains)):
                ref = _brute_chi(sysm.hamiltonian, psi0, chains[a], chains[b], 3)
                assert abs(x[a, b] - ref) < 1e-10


def test_chi_density_matrix_equals_vector(rng):
    sysm = _recording_system(dim_e=2, strength=1.0)
    psi0 = random_unit(rng, 4)
    p = basis_division("z", 2).projector_r("1")
    chain = [(p, 0.5), (None, 1.0)]
    chain2 = [(np.eye(2) - p, 0.5), (None, 1.0)]
    v = chi_functional(sysm, psi0, 0.0, chain, chain2)
    rho = np.outer(psi0, psi0.conj())
    assert chi_functional(sysm, rho, 0.0, chain, chain2) == pytest.approx(v, abs=1e-13)
    # mixed input is linear
    rho2 = 0.5 * rho + 0.5 * np.eye(4) / 4
    expect = 0.5 * v + 0.5 * np.mean([chi_functional(sysm, np.eye(4)[k], 0.0, chain, chain2) for k in range(4)])
    assert chi_functional(sysm, rho2, 0.0, chain, chain2) == pytest.approx(expect, abs=1e-13)


def test_chi_chain_validation():
    sysm = TotalSystem(2, 1)
    p = np.diag([1.0, 0.0])
    with pytest.raises(ValidationError):
        chi_functional(sysm, [1, 0], 0.0, [(p, 1.0)], [(p, 1.0), (p, 2.0)])
    with pytest.raises(ValidationError):
        chi_functional(sysm, [1, 0], 0.0, [(p, 1.0)], [(p, 2.0)])
    with pytest.raises(ValidationError):
        chi_functional(sysm, [1, 0], 0.0, [(p, 2.0), (p, 1.0)], [(p, 2.0), (p, 1.0)])


def test_chi_consistency_flags_coherence():
    ok, r, pair = chi_consistency(np.array([[0.5, 0.4], [0.4, 0.5]]), 0.1)
    assert not ok and r == pytest.approx(0.8) and pair is not None
    assert chi_consistency(np.diag([0.3, 0.7]), 1e-3)[0]


def test_phase_recombination_does_not_change_verdicts():
    sysm = _recording_system(dim_e=32, strength=3.0, seed=2)
    psi0 = np.kron([0.6, 0.8], np.eye(32)[0])
    z = basis_division("z", 2)
    tol = Tolerances(eps_d=0.2)
    mixed = phase_recombination(psi0, lift(z, 32), "1", 0.7, -1.9, sysm, 0.0, tol)
    verdicts = []
    for psi in (psi0, mixed):
        run = grow_tree(sysm, psi, [0.0, 2.0], [z], tol)
        verdicts.append((check_principle(run.tree, z, tol=tol).status,
                         check_principle(run.tree, X_DIV, tol=tol).status))
    assert verdicts[0] == verdicts[1]
