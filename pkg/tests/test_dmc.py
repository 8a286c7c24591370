import itertools
import json
import math

import numpy as np
import pytest

from culling.dmc import (DmcConfig, PopulationError, TrialWavefunction, jastrow_wavenumber,
                         run_dmc, run_dmc_extrapolated, trial_wavefunction,
                         unbinding_threshold_dmc, write_result_json)
from culling.model import ConfigError, ConvergenceError, WellSpec
from culling.single_particle import solve_box_states

SMALL = dict(walkers=200, blocks=10, steps_per_block=100, equil_blocks=1)


def test_config_invariants():
    for kw in (dict(walkers=50), dict(time_step=0.0), dict(blocks=5)):
        with pytest.raises(ConfigError):
            DmcConfig(**kw)


def test_jastrow_cusp_condition():
    for g in (0.1, 1.0, 30.0):
        k = jastrow_wavenumber(g, 0.5)
        assert k * math.tan(k * 0.5) == pytest.approx(g / 2, rel=1e-12)


def test_noninteracting_local_energy_is_envelope_sum():
    well = WellSpec(V0=7.0)
    e1 = solve_box_states(well, 1)[0].energy
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.uniform(-4.9, 4.9, 3)
        _, _, local = trial_wavefunction(x, 3, 0.0, well)
        assert local == pytest.approx(3 * e1, abs=1e-9)


def test_contact_divergence_cancels():
    """Across contact the drift jumps by exactly g and the local energy stays finite."""
    g, h = 1.7, 1e-4
    well = WellSpec(V0=10.0)
    tw = TrialWavefunction(2, g, well)
    X = np.array([[0.1 + h, 0.1], [0.1 - h, 0.1]])
    _, grad, local = tw.evaluate(X)
    # finite separation leaves an O(h) remainder from the pair curvature
    assert grad[0, 0] - grad[1, 0] == pytest.approx(g, rel=1e-2)
    assert np.all(np.isfinite(local))
    assert local[0] == pytest.approx(local[1], abs=1e-6)
    # symmetric finite differences of log Psi agree with the analytic drift
    lp = lambda x: tw.evaluate(np.atleast_2d(x))[0][0]
    for x in X:
        d = np.array([1e-7, 0.0])
        fd = (lp(x + d) - lp(x - d)) / 2e-7
        assert fd == pytest.approx(tw.evaluate(x[None])[1][0, 0], abs=1e-5)


def test_local_energy_by_finite_differences():
    well = WellSpec(V0=5.0)
    tw = TrialWavefunction(3, 1.0, well, outer_depth=2.0)
    X = np.array([[0.1, -0.3, 1.2]])
    logpsi, grad, local = tw.evaluate(X)
    h, lap = 1e-4, 0.0
    for i in range(3):
        e = np.zeros((1, 3))
        e[0, i] = h
        ratio = lambda y: np.exp(tw.evaluate(y)[0][0] - logpsi[0])
        lap += (ratio(X + e) + ratio(X - e) - 2) / h**2
    assert local[0] == pytest.approx(-0.5 * lap + well.potential(X).sum(), abs=1e-5)


def test_bosonic_symmetry():
    well = WellSpec(V0=4.0)
    x = np.array([0.3, -0.2, 1.7])
    ref = trial_wavefunction(x, 3, 2.0, well, outer_depth=1.0)[0]
    for p in itertools.permutations(range(3)):
        assert trial_wavefunction(x[list(p)], 3, 2.0, well, outer_depth=1.0)[0] == pytest.approx(ref)


def test_trial_rejects_bad_input():
    well = WellSpec(V0=4.0)
    with pytest.raises(ConfigError):
        trial_wavefunction([0.0, 6.0], 2, 1.0, well)
    with pytest.raises(ConfigError):
        trial_wavefunction([0.0], 2, 1.0, well)
    with pytest.raises(ConfigError):
        TrialWavefunction(2, 1.0, well, cutoff=-1.0)


def test_noninteracting_run_reproduces_sum_of_orbital_energies():
    well = WellSpec(V0=10.0)
    res = run_dmc(3, 0.0, well, DmcConfig(**SMALL))
    e1 = solve_box_states(well, 1)[0].energy
    assert res.stderr > 0
    assert abs(res.energy - 3 * e1) <= 3 * res.stderr


def test_seed_determinism(tmp_path):
    well = WellSpec(V0=10.0)
    a = run_dmc(2, 1.0, well, DmcConfig(seed=7, **SMALL))
    b = run_dmc(2, 1.0, well, DmcConfig(seed=7, **SMALL))
    c = run_dmc(2, 1.0, well, DmcConfig(seed=8, **SMALL))
    assert a.digest() == b.digest() and a.energy == b.energy
    assert c.digest() != a.digest()
    write_result_json(a, tmp_path / "r.json")
    rec = json.loads((tmp_path / "r.json").read_text())
    assert rec["history_digest"] == a.digest() and rec["config"]["seed"] == 7


def test_population_stays_near_target():
    res = run_dmc(2, 1.0, WellSpec(V0=10.0), DmcConfig(**SMALL))
    pop = res.population_history
    assert 0.5 * 200 <= pop.min() and pop.max() <= 2 * 200
    assert 0.9 < res.acceptance <= 1.0


def test_population_explosion_and_collapse_abort():
    well = WellSpec(V0=10.0)
    base = dict(SMALL, time_step=1e-2, feedback_steps=1e9)
    with pytest.raises(PopulationError, match="POPULATION_EXPLOSION"):
        run_dmc(2, 1.0, well, DmcConfig(reference_shift=50.0, **base))
    with pytest.raises(PopulationError, match="POPULATION_COLLAPSE"):
        run_dmc(2, 1.0, well, DmcConfig(reference_shift=-50.0, **base))


@pytest.mark.slow
def test_error_bars_shrink_like_inverse_root_blocks():
    # blocks much longer than the energy autocorrelation time; RMS over seeds tames the noise
    well = WellSpec(V0=10.0)
    counts = [20, 40, 80, 160]
    errs = []
    for n in counts:
        e = [run_dmc(2, 1.0, well, DmcConfig(walkers=200, blocks=n, steps_per_block=250,
                                             equil_blocks=2, time_step=2e-3, seed=s)).stderr
             for s in (1, 2, 3)]
        errs.append(math.sqrt(np.mean(np.square(e))))
    slope = np.polyfit(np.log(counts), np.log(errs), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)


def test_two_time_step_extrapolation_fields():
    res = run_dmc_extrapolated(2, 1.0, WellSpec(V0=10.0), DmcConfig(**SMALL))
    assert res.extrapolated_energy == pytest.approx(2 * res.energy - res.coarse.energy)
    assert res.timestep_bias_estimate == pytest.approx(res.energy - res.extrapolated_energy)
    assert res.coarse.config.time_step == 2 * res.config.time_step


def test_threshold_needs_a_bound_point():
    with pytest.raises(ConvergenceError, match="NO_BRACKET"):
        unbinding_threshold_dmc(2, 1.0, [0.3, 0.2],
                                energy=lambda n, w: (1.0 if n == 2 else 0.0, 0.01))
    with pytest.raises(ConfigError):
        unbinding_threshold_dmc(1, 1.0, [1.0, 2.0])


def test_threshold_extrapolation_on_a_known_line():
    # Delta E = 0.5 (2 - V0): threshold at V0 = 2
    energy = lambda n, w: (-0.5 * (w.V0 - 2.0) if n == 2 else 0.0, 1e-3)
    pt = unbinding_threshold_dmc(2, 1.0, [5.0, 4.0, 3.0, 2.5, 1.5, 1.0], energy=energy)
    assert pt.V0 == pytest.approx(2.0, abs=1e-9)
    assert [s[0] for s in pt.samples] == [5.0, 4.0, 3.0, 2.5, 1.5]


@pytest.mark.slow
def test_weak_pair_matches_extrapolated_diagonalisation():
    from culling.exact_diag import extrapolated_ground_energy

    well = WellSpec(V0=30.0)
    e_ref, e_err, _ = extrapolated_ground_energy(2, 0.5, well)
    res = run_dmc(2, 0.5, well)
    assert res.stderr <= 1e-3
    assert abs(res.energy - e_ref) <= 3 * res.stderr
