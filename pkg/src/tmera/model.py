"""Spin-chain model terms and Trotter gate schedules.

The transverse-field Ising chain on a ring of L sites,

    H = - sum_k ( h * sz_k  +  sx_k * sx_{k+1} ),

is rewritten as a pure sum of two-site bond terms by splitting each field
term h*sz_k evenly between the two bonds touching site k:

    H = sum_k h_term(k, k+1),
    h_term = - sx (x) sx - (h/2) * ( sz (x) 1 + 1 (x) sz ).

Bonds are 1-based: bond k couples sites (k, k+1), bond L wraps to (L, 1).
Gates are built from the Hermitian eigendecomposition of a bond term,
``exp(-tau*H_k) = Q exp(-tau*e) Q^dagger``; real-time evolution uses
``tau = 1j*dt`` (unitary gates), imaginary time uses ``tau = dt``
(Hermitian positive definite gates).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, Matricization, herm_eig

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)

GATE_LEGS = ("o1", "o2", "i1", "i2")


class ModelError(ValueError):
    """Invalid model parameters (bad chain length, field, ...)."""


@dataclass(frozen=True)
class TwoSiteTerm:
    """A two-site Hamiltonian term acting on bond ``k`` = sites (k, k+1).

    ``tensor`` has legs (o1, o2, i1, i2): two outgoing site legs followed by
    two incoming ones, each of dimension ``d``.
    """

    bond: int
    tensor: Tensor

    @property
    def d(self) -> int:
        return self.tensor.dims[0]

    @property
    def matrix(self) -> np.ndarray:
        d = self.d
        return self.tensor.array.reshape(d * d, d * d)


def ising_bond_term(h: float, k: int = 1) -> TwoSiteTerm:
    """The single-bond term of the transverse-field Ising ring.

    Usable on chains of any even length; :func:`ising_terms` adds the
    chain-geometry validation required by the coarse-graining network.
    """
    if h < 0:
        raise ModelError(f"transverse field must be non-negative, got h={h}")
    mat = -np.kron(SX, SX) - 0.5 * h * (np.kron(SZ, I2) + np.kron(I2, SZ))
    return TwoSiteTerm(bond=k, tensor=Tensor(mat.reshape(2, 2, 2, 2), GATE_LEGS))


def ising_terms(L: int, h: float) -> list[TwoSiteTerm]:
    """All L bond terms of the Ising ring, bond k = 1 .. L.

    ``L`` must be at least 4 and a power of two (L = 2**(ell+1)), the sizes
    the layered ansatz supports.
    """
    if L < 4 or (L & (L - 1)) != 0:
        raise ModelError(
            f"chain length must be a power of two >= 4 (L = 2**(ell+1)), got L={L}"
        )
    base = ising_bond_term(h)
    return [TwoSiteTerm(bond=k, tensor=base.tensor) for k in range(1, L + 1)]


MODELS = {"ising": ising_terms}


def two_site_gate(term: TwoSiteTerm, tau: complex) -> Tensor:
    """``exp(-tau * H_k)`` as a 4-leg gate tensor (o1, o2, i1, i2).

    tau = 0 gives the identity gate exactly (up to eigensolver roundoff).
    """
    d = term.d
    spl = Matricization((0, 1), (2, 3))
    evals, q = herm_eig(term.tensor, spl)
    qm = q.array.reshape(d * d, d * d)
    gate = (qm * np.exp(-tau * evals)) @ qm.conj().T
    return Tensor(gate.reshape(d, d, d, d), GATE_LEGS)


@dataclass(frozen=True)
class GateLayer:
    """One homogeneous slice of a Trotter step.

    ``bonds`` lists the bond indices the layer acts on, in application
    order; ``gates[i]`` is the gate applied at ``bonds[i]``.  For the
    odd/even style all bonds in a layer commute and share one parity;
    ``canonical_bond`` is the representative used in translation-invariant
    updates.
    """

    label: str
    tau: complex
    bonds: tuple[int, ...]
    gates: tuple[Tensor, ...]
    canonical_bond: int


@dataclass(frozen=True)
class GateSchedule:
    """An ordered list of gate layers making up one Trotter time step."""

    kind: str
    order: int
    dt: float
    sweep_style: str
    layers: tuple[GateLayer, ...]

    @property
    def gates(self):
        """Flat (bond, gate) sequence in application order."""
        out = []
        for layer in self.layers:
            out.extend(zip(layer.bonds, layer.gates))
        return out


def _tau_for(kind: str, step: float) -> complex:
    if kind == "real":
        return 1j * step
    if kind == "euclidean":
        return complex(step)
    raise ModelError(f"kind must be 'real' or 'euclidean', got {kind!r}")


def _layer(terms, bonds, label, kind, step, e_shift):
    by_bond = {t.bond: t for t in terms}
    tau = _tau_for(kind, step)
    gates = []
    for k in bonds:
        term = by_bond[k]
        g = two_site_gate(term, tau)
        if e_shift != 0.0 and kind == "euclidean":
            g = Tensor(g.array * np.exp(step * e_shift), g.legs)
        gates.append(g)
    return GateLayer(
        label=label,
        tau=tau,
        bonds=tuple(bonds),
        gates=tuple(gates),
        canonical_bond=bonds[0],
    )


def trotter_schedule(
    terms,
    dt: float,
    kind: str = "euclidean",
    order: int = 2,
    sweep_style: str = "odd_even",
    e_shift: float = 0.0,
) -> GateSchedule:
    """Build the gate layers for one Trotter step of size ``dt``.

    odd_even style, order 1:  odd bonds at dt, then even bonds at dt.
    odd_even style, order 2:  odd at dt/2, even at dt, odd at dt/2.
    sequential style, order 1:  bonds 1..L once at dt.
    sequential style, order 2:  bonds 1..L at dt/2, then L..1 at dt/2.

    Bonds within a parity class are applied in ascending order.  ``e_shift``
    rescales imaginary-time gates to exp(-dt*(H_k - e_shift)), a guard that
    keeps absorbed norms near one on long runs; it changes no physics since
    the state is renormalized after every gate.
    """
    if dt < 0:
        raise ModelError(f"dt must be non-negative, got {dt}")
    if order not in (1, 2):
        raise ModelError(f"trotter order must be 1 or 2, got {order}")
    L = len(terms)
    if L % 2 != 0:
        raise ModelError("odd/even bond classes need an even number of bonds")
    bonds = sorted(t.bond for t in terms)
    if bonds != list(range(1, L + 1)):
        raise ModelError("terms must cover bonds 1..L exactly once")
    odd = [k for k in range(1, L + 1) if k % 2 == 1]
    even = [k for k in range(1, L + 1) if k % 2 == 0]

    if sweep_style == "odd_even":
        if order == 1:
            specs = [(odd, "odd", dt), (even, "even", dt)]
        else:
            specs = [(odd, "odd", dt / 2), (even, "even", dt), (odd, "odd", dt / 2)]
    elif sweep_style == "sequential":
        fwd = list(range(1, L + 1))
        if order == 1:
            specs = [(fwd, "fwd", dt)]
        else:
            specs = [(fwd, "fwd", dt / 2), (fwd[::-1], "bwd", dt / 2)]
    else:
        raise ModelError(f"sweep_style must be 'odd_even' or 'sequential', got {sweep_style!r}")

    layers = tuple(_layer(terms, b, lab, kind, s, e_shift) for b, lab, s in specs)
    return GateSchedule(kind=kind, order=order, dt=dt, sweep_style=sweep_style, layers=layers)
