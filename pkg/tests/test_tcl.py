import math

import numpy as np
import pytest

from exciton_nmqj import tcl
from exciton_nmqj.bath import CM_TO_RAD_PER_PS, SpectralDensity, build_rate_table
from exciton_nmqj.errors import PositivityViolation, StepError
from exciton_nmqj.model import build_channels, diagonalize, dimer, distinct_frequencies
from exciton_nmqj.tcl import (
    DensityMatrix,
    TclTrajectory,
    check_positivity,
    evolve,
    min_eigenvalue,
    step,
)


def _dimer(reorganization=30.0, *, markovian=True, t_final=1.0, dt=0.001, with_lamb=False):
    basis = diagonalize(dimer(50.0, 100.0))
    channels = build_channels(basis)
    rates = build_rate_table(
        SpectralDensity(reorganization, 30.0),
        300.0,
        distinct_frequencies(channels),
        dt,
        t_final,
        markovian,
        with_lamb=with_lamb,
    )
    return basis, channels, rates


def _site_one() -> DensityMatrix:
    return DensityMatrix.pure([1.0, 0.0])


def test_density_matrix_helpers() -> None:
    rho = DensityMatrix.pure([1.0, 1.0j])
    assert rho.trace == pytest.approx(1.0)
    assert rho.populations() == pytest.approx([0.5, 0.5])
    assert rho.is_hermitian()
    with pytest.raises(ValueError, match="square"):
        DensityMatrix(np.zeros((2, 3)))


def test_min_eigenvalue() -> None:
    assert min_eigenvalue(DensityMatrix.pure([0.6, 0.8])) == pytest.approx(0.0, abs=1e-12)
    assert min_eigenvalue(np.diag([0.7, 0.3])) == pytest.approx(0.3)
    assert min_eigenvalue(np.array([[0.5, 0.6], [0.6, 0.5]])) == pytest.approx(-0.1)


def test_uncoupled_bath_gives_unitary_evolution() -> None:
    basis, channels, rates = _dimer(0.0)
    trajectory = evolve(_site_one(), 1.0, 0.001, channels, rates, basis=basis)
    exciton = trajectory.exciton_rho()
    splitting = (basis.energies[0] - basis.energies[1]) * CM_TO_RAD_PER_PS
    expected = exciton[0, 0, 1] * np.exp(-1j * splitting * trajectory.times)
    assert np.allclose(exciton[:, 0, 1], expected, atol=1e-6)
    assert np.allclose(trajectory.exciton_populations(), trajectory.exciton_populations()[0], atol=1e-12)
    assert np.allclose(trajectory.min_eigenvalues, 0.0, atol=1e-9)


def test_trace_and_hermiticity_preserved_over_four_ps() -> None:
    basis, channels, rates = _dimer(markovian=False, t_final=4.0)
    trajectory = evolve(_site_one(), 4.0, 0.001, channels, rates, basis=basis)
    traces = np.trace(trajectory.rho, axis1=1, axis2=2)
    assert np.max(np.abs(traces - 1.0)) < 1e-8
    assert np.allclose(trajectory.rho, np.conj(np.transpose(trajectory.rho, (0, 2, 1))), atol=1e-12)
    assert trajectory.times[-1] == pytest.approx(4.0)


def test_secular_populations_follow_closed_form_rate_equation() -> None:
    basis, channels, rates = _dimer()
    gap = basis.energies[1] - basis.energies[0]
    down = rates.markovian_gamma[rates.index_of(gap)]
    up = rates.markovian_gamma[rates.index_of(-gap)]
    theta_weight = 0.5 * math.sin(2.0 * math.pi / 8.0) ** 2
    decay = theta_weight * (down + up)
    equilibrium = up / (down + up)

    start = DensityMatrix(basis.to_site(np.diag([0.0, 1.0]).astype(complex)))
    trajectory = evolve(start, 1.0, 0.001, channels, rates, basis=basis)
    upper = trajectory.exciton_populations()[:, 1]
    expected = equilibrium + (1.0 - equilibrium) * np.exp(-decay * trajectory.times)
    assert np.allclose(upper, expected, atol=1e-7)
    assert np.allclose(trajectory.exciton_coherences(), 0.0, atol=1e-12)


def test_detailed_balance_fixes_equilibrium_ratio() -> None:
    basis, channels, rates = _dimer()
    gap = basis.energies[1] - basis.energies[0]
    down = rates.markovian_gamma[rates.index_of(gap)]
    up = rates.markovian_gamma[rates.index_of(-gap)]
    assert down / up == pytest.approx(math.exp(gap / (0.6950348 * 300.0)), rel=1e-12)


def test_markovian_evolution_is_time_translation_invariant() -> None:
    basis, channels, rates = _dimer()
    early = evolve(_site_one(), 0.5, 0.001, channels, rates, basis=basis)
    late = evolve(DensityMatrix(_site_one().entries, 5.0), 5.5, 0.001, channels, rates, basis=basis, t0=5.0)
    assert late.times[0] == pytest.approx(5.0)
    assert np.allclose(early.rho, late.rho, atol=1e-12)


def test_rk4_converges_at_fourth_order() -> None:
    basis, channels, rates = _dimer()
    reference = evolve(_site_one(), 0.2, 0.0001, channels, rates, basis=basis).rho[-1]
    coarse = evolve(_site_one(), 0.2, 0.002, channels, rates, basis=basis).rho[-1]
    fine = evolve(_site_one(), 0.2, 0.001, channels, rates, basis=basis).rho[-1]
    ratio = np.max(np.abs(coarse - reference)) / np.max(np.abs(fine - reference))
    assert 10.0 <= ratio <= 22.0


def test_single_step_matches_evolve() -> None:
    basis, channels, rates = _dimer(markovian=False, t_final=0.1)
    stepped = step(_site_one(), 0.0, 0.001, channels, rates, basis=basis)
    trajectory = evolve(_site_one(), 0.001, 0.001, channels, rates, basis=basis)
    assert stepped.time == pytest.approx(0.001)
    assert np.allclose(stepped.entries, trajectory.rho[-1], atol=1e-14)


def test_sample_every_thins_output() -> None:
    basis, channels, rates = _dimer()
    trajectory = evolve(_site_one(), 0.1, 0.001, channels, rates, basis=basis, sample_every=30)
    assert trajectory.times == pytest.approx([0.0, 0.03, 0.06, 0.09, 0.1])


def test_lamb_shift_off_is_bit_identical() -> None:
    basis, channels, plain = _dimer(markovian=False, t_final=0.2)
    _, _, with_lamb = _dimer(markovian=False, t_final=0.2, with_lamb=True)
    first = evolve(_site_one(), 0.2, 0.001, channels, plain, basis=basis)
    second = evolve(_site_one(), 0.2, 0.001, channels, with_lamb, basis=basis)
    assert np.array_equal(first.rho, second.rho)
    shifted = evolve(_site_one(), 0.2, 0.001, channels, with_lamb, basis=basis, include_lamb=True)
    assert not np.allclose(first.rho, shifted.rho, atol=1e-9)


@pytest.mark.parametrize(
    "rho0, message",
    [
        (DensityMatrix(np.diag([0.5, 0.4])), "unit trace"),
        (DensityMatrix(np.array([[0.5, 0.3], [0.1, 0.5]])), "Hermitian"),
    ],
)
def test_evolve_validates_initial_state(rho0: DensityMatrix, message: str) -> None:
    basis, channels, rates = _dimer()
    with pytest.raises(ValueError, match=message):
        evolve(rho0, 0.1, 0.001, channels, rates, basis=basis)


def test_evolve_rejects_non_positive_step() -> None:
    basis, channels, rates = _dimer()
    with pytest.raises(ValueError, match="dt"):
        evolve(_site_one(), 0.1, 0.0, channels, rates, basis=basis)


def test_persistent_trace_drift_raises_step_error(monkeypatch) -> None:
    basis, channels, rates = _dimer()
    monkeypatch.setattr(tcl, "_rk4", lambda generator, rho, t, dt: rho + 1e-6 * np.eye(2))
    with pytest.raises(StepError, match="halvings"):
        evolve(_site_one(), 0.01, 0.001, channels, rates, basis=basis)


def test_check_positivity_reports_first_violation() -> None:
    basis = diagonalize(dimer(50.0, 100.0))
    rho = np.stack([np.eye(2) / 2] * 3).astype(complex)
    trajectory = TclTrajectory(
        times=np.array([0.0, 0.1, 0.2]),
        rho=rho,
        min_eigenvalues=np.array([0.5, -1e-3, -2e-3]),
        basis=basis,
    )
    assert trajectory.first_violation(1e-2) is None
    check_positivity(trajectory, 1e-2)
    with pytest.raises(PositivityViolation) as excinfo:
        check_positivity(trajectory, 1e-9)
    assert excinfo.value.engine == "tcl"
    assert excinfo.value.time == pytest.approx(0.1)
    assert excinfo.value.min_eigenvalue == pytest.approx(-1e-3)
