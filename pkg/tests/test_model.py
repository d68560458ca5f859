import math

import numpy as np
import pytest

from exciton_nmqj.model import (
    ChannelKind,
    SiteHamiltonian,
    build_channels,
    channel_census,
    diagonalize,
    dimer,
    dimer_mixing_angle,
    distinct_frequencies,
    fmo7,
    load_fmo_hamiltonian,
)


def _dimer_basis():
    return diagonalize(dimer(50.0, 100.0))


def test_dimer_energies_and_mixing_angle() -> None:
    basis = _dimer_basis()
    splitting = math.sqrt(50.0**2 + 50.0**2)
    assert basis.energies == pytest.approx([50.0 - splitting, 50.0 + splitting])
    theta = dimer_mixing_angle(50.0, 100.0)
    assert theta == pytest.approx(math.pi / 8)
    assert basis.coefficients[:, 0] == pytest.approx([math.cos(theta), -math.sin(theta)])
    assert basis.coefficients[:, 1] == pytest.approx([math.sin(theta), math.cos(theta)])


def test_diagonalize_reconstructs_hamiltonian() -> None:
    h = load_fmo_hamiltonian()
    basis = diagonalize(h)
    assert np.allclose(basis.hamiltonian(), h.matrix(), atol=1e-9)
    assert np.all(np.diff(basis.energies) > 0)
    assert np.allclose(basis.coefficients.T @ basis.coefficients, np.eye(7), atol=1e-12)
    for column in basis.coefficients.T:
        assert column[np.argmax(np.abs(column))] > 0


def test_uncoupled_sites_use_identity_basis() -> None:
    h = SiteHamiltonian(site_energies=np.array([100.0, 0.0]), couplings=np.zeros((2, 2)))
    basis = diagonalize(h)
    assert list(basis.energies) == [0.0, 100.0]
    assert np.array_equal(basis.coefficients, np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_site_hamiltonian_rejects_asymmetric_couplings() -> None:
    with pytest.raises(ValueError, match="symmetric"):
        SiteHamiltonian(site_energies=np.zeros(2), couplings=np.array([[0.0, 1.0], [2.0, 0.0]]))


def test_site_hamiltonian_rejects_diagonal_couplings() -> None:
    with pytest.raises(ValueError, match="zero diagonal"):
        SiteHamiltonian(site_energies=np.zeros(2), couplings=np.eye(2))


def test_dimer_channels_match_closed_form() -> None:
    basis = _dimer_basis()
    channels = build_channels(basis)
    theta = dimer_mixing_angle(50.0, 100.0)
    gap = basis.energies[1] - basis.energies[0]

    assert len(channels) == 6
    assert [ch.kind for ch in channels[:3]] == [
        ChannelKind.DEPHASING,
        ChannelKind.RELAXATION,
        ChannelKind.ABSORPTION,
    ]
    assert [ch.site for ch in channels] == [0, 0, 0, 1, 1, 1]
    assert channels[1].frequency == pytest.approx(gap)
    assert channels[2].frequency == pytest.approx(-gap)

    half_sin = 0.5 * math.sin(2 * theta)
    assert channels[1].generator[0, 1].real == pytest.approx(half_sin)
    assert channels[4].generator[0, 1].real == pytest.approx(-half_sin)
    assert np.allclose(channels[2].generator, channels[1].generator.conj().T)
    assert np.allclose(
        np.diag(channels[0].generator).real, [math.cos(theta) ** 2, math.sin(theta) ** 2]
    )
    assert np.allclose(
        np.diag(channels[3].generator).real, [math.sin(theta) ** 2, math.cos(theta) ** 2]
    )


def test_relaxation_product_weight() -> None:
    channels = build_channels(_dimer_basis())
    theta = dimer_mixing_angle(50.0, 100.0)
    product = channels[1].product
    assert product[1, 1].real == pytest.approx(0.25 * math.sin(2 * theta) ** 2)
    assert product[0, 0] == pytest.approx(0.0)


def test_uncoupled_sites_only_dephase() -> None:
    h = SiteHamiltonian(site_energies=np.array([0.0, 100.0, 200.0]), couplings=np.zeros((3, 3)))
    channels = build_channels(diagonalize(h))
    assert len(channels) == 3
    assert all(ch.kind is ChannelKind.DEPHASING for ch in channels)


def test_degenerate_gaps_share_one_frequency() -> None:
    h = SiteHamiltonian(
        site_energies=np.array([0.0, 100.0, 200.0]),
        couplings=np.array([[0.0, 1e-3, 0.0], [1e-3, 0.0, 1e-3], [0.0, 1e-3, 0.0]]),
    )
    channels = build_channels(diagonalize(h), degeneracy_tol=0.01)
    frequencies = distinct_frequencies(channels)
    assert frequencies.size == 5
    assert frequencies[0] < -150.0 and frequencies[2] == 0.0


def test_fmo_channel_census() -> None:
    channels = build_channels(diagonalize(load_fmo_hamiltonian()))
    census = channel_census(channels)
    assert census.relaxation_frequencies == 42
    assert census.dephasing_channels == 7


def test_fmo_energies_shifted_to_zero() -> None:
    h = load_fmo_hamiltonian()
    assert h.n_sites == 7
    assert h.site_energies.min() == 0.0
    assert h.couplings[0, 1] == pytest.approx(-87.7)
    assert h.site_energies[1] - h.site_energies[0] == pytest.approx(120.0)


def test_fmo7_rejects_wrong_shape() -> None:
    with pytest.raises(ValueError, match="7x7"):
        fmo7(np.zeros((6, 6)))


def test_load_fmo_hamiltonian_missing_file(tmp_path) -> None:
    with pytest.raises(FileNotFoundError):
        load_fmo_hamiltonian(tmp_path / "missing.txt")


def test_exciton_state_round_trip() -> None:
    basis = _dimer_basis()
    site = np.array([[1.0, 0.0], [0.0, 0.0]])
    exciton = basis.to_exciton(site)
    assert np.allclose(basis.to_site(exciton), site)
    assert np.allclose(basis.site_state(0), basis.coefficients[0, :])
