import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from culling.exact_diag import (BasisTooLarge, FockBasis, build_basis, build_hamiltonian,
                                classify_bound, diagonalize, ground_energy, interaction_tensor,
                                load_interaction_cache, pair_interaction, save_interaction_cache,
                                solve_many_body, threshold_scan_diag, write_levels_csv,
                                level_rows)
from culling.model import ConfigError, ConvergenceError, WellSpec
from culling.single_particle import quartic_overlap, solve_box_states
from culling.tonks import tonks_threshold


@pytest.fixture(scope="module")
def modes():
    return solve_box_states(WellSpec(V0=8.0), 10)


def test_basis_dimension_and_order():
    b = build_basis(3, 5)
    assert len(b) == 35
    occ = b.occupations
    assert np.all(occ.sum(axis=1) == 3)
    # descending lexicographic order of occupation vectors
    assert all(tuple(a) > tuple(c) for a, c in zip(occ, occ[1:]))
    assert b.lookup(occ[7]) == 7
    with pytest.raises(BasisTooLarge):
        FockBasis(5, 60)


def test_tensor_symmetry_and_parity(modes):
    U = interaction_tensor(modes, g=1.0)
    for perm in [(1, 0, 2, 3), (2, 3, 0, 1), (0, 2, 1, 3), (3, 1, 2, 0)]:
        assert np.max(np.abs(U - U.transpose(perm))) < 1e-12
    assert U[0, 0, 0, 0] == pytest.approx(quartic_overlap([modes[0]] * 4), rel=1e-10)


def test_dense_and_matrix_free_agree(modes):
    b = build_basis(3, len(modes))
    H = build_hamiltonian(b, modes, 0.8)
    dense = H.todense()
    assert np.max(np.abs(dense - dense.T)) < 1e-12
    v = np.random.default_rng(1).standard_normal(len(b))
    assert np.max(np.abs(dense @ v - H.matvec(v))) < 1e-12


def test_hamiltonian_matches_brute_force_second_quantisation(modes):
    """Matrix elements from the full tensor and explicit ladder operators."""
    M = 5
    sub = modes[:M]
    b = build_basis(2, M)
    H = build_hamiltonian(b, sub, 1.3).todense()
    U = interaction_tensor(sub, g=1.3)
    occ = b.occupations
    ref = np.zeros_like(H)
    for i, ni in enumerate(occ):
        ref[i, i] += sum(n * m.energy for n, m in zip(ni, sub))
        for j, nj in enumerate(occ):
            total = 0.0
            for a in range(M):
                for bb in range(M):
                    for c in range(M):
                        for d in range(M):
                            # <i| a+_a a+_b a_d a_c |j>
                            n = nj.astype(float).copy()
                            amp = np.sqrt(n[c]); n[c] -= 1
                            if amp == 0:
                                continue
                            amp *= np.sqrt(n[d]); n[d] -= 1
                            if amp == 0:
                                continue
                            n[bb] += 1; amp *= np.sqrt(n[bb])
                            n[a] += 1; amp *= np.sqrt(n[a])
                            if np.array_equal(n, ni):
                                total += U[a, bb, c, d] * amp
            ref[i, j] += 0.5 * total
    assert np.max(np.abs(H - ref)) < 1e-12


def test_single_particle_sector_is_exact():
    well = WellSpec(V0=12.0)
    spec = solve_many_body(1, 1.0, well, M=20, k=6)
    exact = [s.energy for s in solve_box_states(well, 6)]
    assert np.max(np.abs(spec.eigenvalues - exact)) < 1e-10


def test_sparse_path_matches_dense():
    well = WellSpec(V0=10.0)
    modes = solve_box_states(well, 40)
    b = build_basis(2, 40)
    H = build_hamiltonian(b, modes, 1.0, dense_limit=0)
    assert H.matrix is None
    iterative = diagonalize(H, k=3).eigenvalues
    dense = np.linalg.eigvalsh(H.todense())[:3]
    assert np.max(np.abs(iterative - dense)) < 1e-9


@settings(max_examples=10, deadline=None)
@given(V0=st.floats(2.0, 40.0), g=st.floats(0.0, 3.0))
def test_more_modes_never_raise_the_ground_energy(V0, g):
    well = WellSpec(V0=V0)
    E = [ground_energy(2, g, well, M) for M in (8, 12, 16)]
    assert E[0] >= E[1] - 1e-10 and E[1] >= E[2] - 1e-10


def test_classification_of_deep_and_unbound_levels():
    well = WellSpec(V0=3.0)
    spec = solve_many_body(1, 0.0, well, M=20, k=4, localize=True)
    resolve = lambda D: solve_many_body(1, 0.0, well.with_box(D), M=20, k=4).eigenvalues
    classify_bound(spec, well, resolve)
    assert spec.bound_flags[0] and not spec.bound_flags[1:].any()
    with pytest.raises(ConfigError):
        classify_bound(solve_many_body(1, 0.0, well, M=5, k=2), well)


def test_cache_round_trip(tmp_path, modes):
    path = tmp_path / "u.json"
    save_interaction_cache(modes, 0.5, path)
    U = load_interaction_cache(path, modes[0].well, len(modes), 0.5)
    assert np.array_equal(U, pair_interaction(modes, 0.5))
    assert load_interaction_cache(path, modes[0].well.with_depth(9.0), len(modes), 0.5) is None


def test_levels_csv(tmp_path):
    rows = level_rows([8.0], [1, 2], 1.0, M=10, k=2, stability=False)
    write_levels_csv(rows, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[:2] == ["# schema: diag-levels v1", "V0,N,level_index,energy,bound"]
    assert len(lines) == 2 + 4


def test_threshold_extrapolates_in_inverse_cutoff():
    pt = threshold_scan_diag(2, 1.0, (0.2, 2.0), M=12, extra_modes=4, tol=1e-4)
    d = pt.detail
    assert 0 < pt.V0 < tonks_threshold(2)
    assert pt.error == pytest.approx(max(abs(d["V0_M"] - d["V0_M_plus"]), 1e-4))
    # basis growth lowers the threshold, and the extrapolation carries on past M + 4
    assert pt.V0 < d["V0_M_plus"] < d["V0_M"]
    with pytest.raises(ConvergenceError):
        threshold_scan_diag(2, 1.0, (0.01, 0.05), M=12)
