import math

import numpy as np
import pytest
from scipy.integrate import quad

from exciton_nmqj.bath import (
    BOLTZMANN_CM_PER_K,
    CM_TO_RAD_PER_PS,
    SpectralDensity,
    build_rate_table,
    correlator,
    dephasing_rate,
    lamb_shift,
    markovian_rate,
    relaxation_rate,
    sample_correlator,
    spectral_density,
)

BATH = SpectralDensity(reorganization=30.0, cutoff=30.0)
DIMER_GAP = 2.0 * math.sqrt(2.0) * 50.0


def test_spectral_density_shape() -> None:
    assert spectral_density(BATH, 0.0) == 0.0
    assert spectral_density(BATH, 30.0) == pytest.approx(30.0 / math.e)
    values = spectral_density(BATH, np.linspace(0.0, 200.0, 401))
    assert np.argmax(values) == 60


def test_spectral_density_rejects_negative_frequency() -> None:
    with pytest.raises(ValueError, match="omega >= 0"):
        spectral_density(BATH, -1.0)


@pytest.mark.parametrize("reorganization, cutoff", [(-1.0, 30.0), (30.0, 0.0)])
def test_spectral_density_validates(reorganization: float, cutoff: float) -> None:
    with pytest.raises(ValueError):
        SpectralDensity(reorganization=reorganization, cutoff=cutoff)


def test_correlator_at_zero_time() -> None:
    s0, chi0 = correlator(BATH, 300.0, 0.0)
    assert chi0 == 0.0
    assert s0 > 0.0


def test_correlator_matches_direct_quadrature() -> None:
    coupling = BATH.reorganization / BATH.cutoff
    cutoff = BATH.cutoff * CM_TO_RAD_PER_PS
    kt = BOLTZMANN_CM_PER_K * 300.0 * CM_TO_RAD_PER_PS
    t = 0.15

    def s_integrand(x: float) -> float:
        return coupling * x * math.exp(-x / cutoff) / math.tanh(x / (2.0 * kt)) * math.cos(x * t)

    def chi_integrand(x: float) -> float:
        return -2.0 * coupling * x * math.exp(-x / cutoff) * math.sin(x * t)

    upper = 40.0 * cutoff
    s_ref, _ = quad(s_integrand, 0.0, upper, limit=400, epsabs=0.0, epsrel=1e-10)
    chi_ref, _ = quad(chi_integrand, 0.0, upper, limit=400, epsabs=0.0, epsrel=1e-10)
    s_value, chi_value = correlator(BATH, 300.0, t)
    assert s_value == pytest.approx(s_ref, rel=1e-6)
    assert chi_value == pytest.approx(chi_ref, rel=1e-6)


def test_sampled_correlator_matches_pointwise() -> None:
    times = np.linspace(0.0, 0.5, 6)
    sampled = sample_correlator(BATH, 300.0, times)
    s_direct, chi_direct = correlator(BATH, 300.0, times)
    assert np.allclose(sampled.s_values, s_direct, rtol=1e-6, atol=1e-9)
    assert np.allclose(sampled.chi_values, chi_direct, rtol=1e-6, atol=1e-9)
    assert sampled.values[0] == pytest.approx(s_direct[0])


def test_correlator_rejects_zero_temperature() -> None:
    with pytest.raises(ValueError, match="temperature"):
        correlator(BATH, 0.0, 0.1)


@pytest.mark.parametrize("omega", [-141.4, 0.0, 141.4, 200.0])
def test_rates_vanish_at_zero_time(omega: float) -> None:
    assert relaxation_rate(BATH, 300.0, omega, 0.0) == 0.0
    assert lamb_shift(BATH, 300.0, omega, 0.0) == 0.0
    assert dephasing_rate(BATH, 300.0, 0.0) == 0.0


@pytest.mark.parametrize("omega, temperature", [(141.4, 300.0), (37.0, 77.0), (520.0, 12.0), (8.0, 400.0)])
def test_markovian_detailed_balance(omega: float, temperature: float) -> None:
    ratio = markovian_rate(BATH, temperature, -omega) / markovian_rate(BATH, temperature, omega)
    expected = math.exp(-omega / (BOLTZMANN_CM_PER_K * temperature))
    assert ratio == pytest.approx(expected, rel=1e-12)


def test_markovian_dephasing_limit_is_linear_in_temperature() -> None:
    kt = BOLTZMANN_CM_PER_K * 300.0 * CM_TO_RAD_PER_PS
    assert markovian_rate(BATH, 300.0, 0.0) == pytest.approx(2.0 * math.pi * kt)
    assert markovian_rate(BATH, 150.0, 0.0) == pytest.approx(0.5 * markovian_rate(BATH, 300.0, 0.0))


def test_markovian_rate_small_on_spectral_tail() -> None:
    assert markovian_rate(BATH, 300.0, 200.0) < 0.1 * markovian_rate(BATH, 300.0, 30.0)


def test_relaxation_rate_approaches_markovian_limit() -> None:
    markov = markovian_rate(BATH, 300.0, 200.0)
    assert relaxation_rate(BATH, 300.0, 200.0, 4.0) == pytest.approx(markov, rel=0.05)


def test_dephasing_rate_approaches_markovian_limit() -> None:
    assert dephasing_rate(BATH, 300.0, 20.0) == pytest.approx(markovian_rate(BATH, 300.0, 0.0), rel=0.02)


def test_dephasing_rate_is_zero_frequency_relaxation_rate() -> None:
    assert dephasing_rate(BATH, 300.0, 0.3) == pytest.approx(
        relaxation_rate(BATH, 300.0, 0.0, 0.3), rel=1e-6
    )


def test_rate_table_matches_direct_quadrature() -> None:
    table = build_rate_table(BATH, 300.0, [DIMER_GAP, -DIMER_GAP], dt=0.001, t_final=2.0)
    for t in (0.1, 0.5, 1.0, 2.0):
        row = int(round(t / table.dt))
        for omega in (DIMER_GAP, -DIMER_GAP):
            expected = relaxation_rate(BATH, 300.0, omega, t)
            assert table.column(omega)[row] == pytest.approx(expected, rel=1e-4, abs=1e-5)
        assert table.dephasing[row] == pytest.approx(dephasing_rate(BATH, 300.0, t), rel=1e-4)


def test_rate_table_lamb_shift_matches_direct_quadrature() -> None:
    table = build_rate_table(BATH, 300.0, [DIMER_GAP], dt=0.001, t_final=0.5, with_lamb=True)
    assert table.lamb is not None
    row = table.times.size - 1
    index = table.index_of(DIMER_GAP)
    assert table.lamb[row, index] == pytest.approx(
        lamb_shift(BATH, 300.0, DIMER_GAP, 0.5), rel=1e-4, abs=1e-5
    )
    assert np.all(table.lamb[0] == 0.0)


def test_rate_table_reproduces_negative_rates_before_one_ps() -> None:
    table = build_rate_table(BATH, 300.0, [200.0], dt=0.002, t_final=4.0)
    early = table.times < 1.0
    assert np.any(table.column(200.0)[early] < 0.0)
    assert table.column(200.0)[-1] == pytest.approx(table.markovian_gamma[table.index_of(200.0)], rel=0.05)


def test_dephasing_rate_stays_below_markovian_limit_early() -> None:
    table = build_rate_table(BATH, 300.0, [], dt=0.005, t_final=0.5)
    limit = markovian_rate(BATH, 300.0, 0.0)
    assert np.all(table.dephasing < limit)
    assert np.all(np.diff(table.dephasing) > 0.0)


def test_fmo_dephasing_still_rising_at_first_beat() -> None:
    fmo_bath = SpectralDensity(reorganization=35.0, cutoff=150.0)
    limit = markovian_rate(fmo_bath, 300.0, 0.0)
    assert limit == pytest.approx(2.0 * math.pi * (35.0 / 150.0) * 300.0 * BOLTZMANN_CM_PER_K * CM_TO_RAD_PER_PS)
    assert dephasing_rate(fmo_bath, 300.0, 0.07) < 0.95 * limit


def test_markovian_table_rows_are_identical() -> None:
    table = build_rate_table(BATH, 300.0, [DIMER_GAP, -DIMER_GAP], dt=0.01, t_final=1.0, markovian=True)
    assert table.markovian
    assert np.all(table.gamma == table.gamma[0])
    assert list(table.frequencies) == pytest.approx([-DIMER_GAP, 0.0, DIMER_GAP])
    assert np.array_equal(table.rates_at(37.0), table.markovian_gamma)


def test_rate_table_interpolates_between_rows() -> None:
    table = build_rate_table(BATH, 300.0, [DIMER_GAP], dt=0.01, t_final=0.1)
    midpoint = table.rates_at(0.055)
    assert midpoint == pytest.approx(0.5 * (table.gamma[5] + table.gamma[6]))


def test_rate_table_rejects_out_of_range_time() -> None:
    table = build_rate_table(BATH, 300.0, [DIMER_GAP], dt=0.01, t_final=0.1)
    with pytest.raises(ValueError, match="covers"):
        table.rates_at(0.2)
    with pytest.raises(KeyError):
        table.index_of(12.0)


@pytest.mark.parametrize("dt, t_final", [(0.0, 1.0), (0.01, -1.0)])
def test_rate_table_validates_grid(dt: float, t_final: float) -> None:
    with pytest.raises(ValueError):
        build_rate_table(BATH, 300.0, [DIMER_GAP], dt=dt, t_final=t_final)
