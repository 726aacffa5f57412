"""Measurements on the ansatz: energies, local profiles, top-weight entropy.

Every two-site expectation comes from the reduced density object of one
physical bond, obtained by descending the identity juncture at the top of
the bond's causal cone.  One descent per bond yields the bond energy, the
transverse magnetization of its first site, and the xx correlator at once.

Sharing tensors across a row buys exact symmetry only under translation by
half the ring: the two top branches are interchangeable, but smaller shifts
change how bonds align with the tiling.  Shared-tensor measurements
therefore descend every bond in the first half of the ring — one per
equivalence class — and tile the values onto the second half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cones import cone_of, descend_rho
from .model import I2, SX, SZ, TwoSiteTerm
from .state import MeraState
from .tensor import Tensor


class ObservableError(ValueError):
    """Malformed operator or mismatched term list."""


def _op_array(op, d: int) -> np.ndarray:
    """Accept a (d,d,d,d) tensor, a (d^2, d^2) matrix, or a Tensor."""
    arr = op.array if isinstance(op, Tensor) else np.asarray(op, dtype=complex)
    if arr.shape == (d * d, d * d):
        arr = arr.reshape(d, d, d, d)
    if arr.shape != (d, d, d, d):
        raise ObservableError(f"operator shape {arr.shape} fits neither two-site form")
    return arr


def expect_two_site(state: MeraState, op, bond: int) -> complex:
    """<state| op_(bond, bond+1) |state> for a two-site operator."""
    geo = state.geometry
    cone = cone_of(geo, bond)
    rho = descend_rho(state, cone, geo.ell, "chi").tensor.array
    arr = _op_array(op, geo.d)
    # operator axes (out1, out2, in1, in2); rho axes (ket1, ket2, bra1, bra2)
    return complex(np.einsum("abcd,cdab->", arr, rho))


def _bond_values(state: MeraState, term: TwoSiteTerm):
    """(energy, <sx sx>, <sz x 1>) of one bond from a single descent."""
    geo = state.geometry
    rho = descend_rho(state, cone_of(geo, term.bond), geo.ell, "chi").tensor.array
    contract = lambda a: complex(np.einsum("abcd,cdab->", a.reshape(2, 2, 2, 2), rho))
    e = contract(term.matrix)
    xx = contract(np.kron(SX, SX))
    z1 = contract(np.kron(SZ, I2))
    return e, xx, z1


def _term_for(terms, bond: int) -> TwoSiteTerm:
    for t in terms:
        if t.bond == bond:
            return t
    raise ObservableError(f"no term for bond {bond} in the list")


def energy(state: MeraState, terms) -> complex:
    """Total energy; shared-tensor states descend half the bonds and double."""
    L = state.geometry.L
    if state.ti:
        half = sum(_bond_values(state, _term_for(terms, b))[0]
                   for b in range(1, L // 2 + 1))
        return 2 * half
    return sum(_bond_values(state, t)[0] for t in terms)


def lambda_entropy(state: MeraState) -> float:
    """Natural-log entropy of the squared top weights."""
    p = np.asarray(state.lam, dtype=float) ** 2
    p = p[p > 1e-300]
    return float(-np.sum(p * np.log(p)))


@dataclass
class Measurement:
    """One snapshot: energies, per-site/per-bond profiles, top entropy."""

    energy_total: float
    energy_per_site: float
    sz: np.ndarray
    sxsx: np.ndarray
    lam_entropy: float

    def as_dict(self) -> dict:
        return {
            "energy_total": self.energy_total,
            "energy_per_site": self.energy_per_site,
            "sz_mean": float(np.mean(self.sz)),
            "sxsx_mean": float(np.mean(self.sxsx)),
            "lambda_entropy": self.lam_entropy,
        }


def measure(state: MeraState, terms) -> Measurement:
    """Full snapshot; site k's magnetization is read off bond k's juncture
    (site k is the first site of bond k, so each site is counted once)."""
    L = state.geometry.L
    if state.ti:
        vals = [_bond_values(state, _term_for(terms, b)) for b in range(1, L // 2 + 1)]
        e = 2 * sum(v[0] for v in vals)
        sxsx = np.tile([v[1].real for v in vals], 2)
        sz = np.tile([v[2].real for v in vals], 2)
    else:
        if len(terms) != L:
            raise ObservableError(f"expected {L} terms, got {len(terms)}")
        vals = [_bond_values(state, _term_for(terms, b)) for b in range(1, L + 1)]
        e = sum(v[0] for v in vals)
        sxsx = np.array([v[1].real for v in vals])
        sz = np.array([v[2].real for v in vals])
    total = float(np.real(e))
    return Measurement(
        energy_total=total,
        energy_per_site=total / L,
        sz=sz,
        sxsx=sxsx,
        lam_entropy=lambda_entropy(state),
    )
