"""Exact references: the two independent energy routes against each other,
frozen values, and the operator-embedding helper."""

import numpy as np
import pytest

from tmera.exact import (
    E_PER_SITE_CRITICAL,
    ExactError,
    dense_tfim_hamiltonian,
    ed_ground_energy,
    ed_ground_state,
    embed_two_site,
    free_fermion_energy,
)
from tmera.model import I2, SX, SZ


def test_free_fermion_frozen_values():
    # L=4, h=1: E = -2*(sqrt(2 - sqrt 2) + sqrt(2 + sqrt 2))
    want = -2.0 * (np.sqrt(2.0 - np.sqrt(2.0)) + np.sqrt(2.0 + np.sqrt(2.0)))
    assert abs(free_fermion_energy(4, 1.0) - want) < 1e-13
    assert abs(free_fermion_energy(4, 1.0) + 5.226251859505506) < 1e-12
    # h -> large: per site approaches -h (fully polarized), from above
    assert abs(free_fermion_energy(8, 50.0) / 8 + 50.005) < 1e-2


def test_free_fermion_thermodynamic_limit():
    e = free_fermion_energy(4096, 1.0) / 4096
    assert abs(e - E_PER_SITE_CRITICAL) < 1e-6
    # finite-size energies per site sit below the infinite-chain value
    assert e < E_PER_SITE_CRITICAL


def test_free_fermion_guards():
    with pytest.raises(ExactError):
        free_fermion_energy(5, 1.0)
    with pytest.raises(ExactError):
        free_fermion_energy(2, 1.0)
    with pytest.raises(ExactError):
        free_fermion_energy(8, 0.0)


def test_dense_hamiltonian_basics():
    H = dense_tfim_hamiltonian(4, 0.8)
    assert H.shape == (16, 16)
    assert np.allclose(H, H.conj().T)
    # h = 0: classical ferromagnet, ground energy -L
    evals = np.linalg.eigvalsh(dense_tfim_hamiltonian(4, 0.0))
    assert abs(evals[0] + 4.0) < 1e-12
    with pytest.raises(ExactError):
        dense_tfim_hamiltonian(17, 1.0)


def test_ed_equals_dense_minimum():
    for L in (4, 6):
        for h in (0.5, 1.0, 1.5):
            evals = np.linalg.eigvalsh(dense_tfim_hamiltonian(L, h))
            assert abs(ed_ground_energy(L, h) - evals[0]) < 1e-12


def test_ed_agrees_with_free_fermions():
    """The two completely independent routes must coincide; this nails the
    momentum-sector convention in the fermionic formula."""
    for L in (4, 8):
        for h in (0.5, 1.0, 1.5):
            assert abs(ed_ground_energy(L, h) - free_fermion_energy(L, h)) < 1e-10


def test_ed_ground_state_contract():
    gs = ed_ground_state(6, 1.2)
    H = dense_tfim_hamiltonian(6, 1.2)
    v = gs.vector
    assert abs(np.linalg.norm(v) - 1.0) < 1e-12
    assert np.allclose(H @ v, gs.energy * v, atol=1e-10)
    assert gs.gap > 0.1
    assert not gs.degenerate
    i = int(np.argmax(np.abs(v)))
    assert v[i].real > 0 and abs(v[i].imag) < 1e-12
    with pytest.raises(ExactError):
        ed_ground_state(14, 1.0)
    with pytest.raises(ExactError):
        ed_ground_energy(16, 1.0)


def test_embed_interior_bond_is_plain_kron():
    rng = np.random.default_rng(21)
    op = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    L = 4
    got = embed_two_site(op, 1, L)
    want = np.kron(op, np.eye(4))
    assert np.allclose(got, want)
    got = embed_two_site(op, 2, L)
    want = np.kron(np.eye(2), np.kron(op, np.eye(2)))
    assert np.allclose(got, want)


def test_embed_wrap_bond():
    """Bond L couples sites (L, 1); verify against a swap construction."""
    L = 4
    op = np.kron(SX, SZ)  # sx on site L, sz on site 1
    got = embed_two_site(op, L, L)
    want = np.kron(SZ, np.kron(I2, np.kron(I2, SX)))
    assert np.allclose(got, want)


def test_embed_bonds_rebuild_hamiltonian():
    L, h = 6, 1.3
    bond = -np.kron(SX, SX) - (h / 2) * (np.kron(SZ, I2) + np.kron(I2, SZ))
    total = sum(embed_two_site(bond, k, L) for k in range(1, L + 1))
    assert np.allclose(total, dense_tfim_hamiltonian(L, h))
    with pytest.raises(ExactError):
        embed_two_site(bond, 0, L)
    with pytest.raises(ExactError):
        embed_two_site(bond, L + 1, L)
