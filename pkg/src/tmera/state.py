"""The layered variational state for a ring of L = 2**(ell+1) sites.

Structure (top to bottom)
-------------------------
Levels are numbered i = 1 (top) .. ell (bottom).  Generating the state from
the top:

* a real non-negative weight vector ``lam`` (sum of squares = 1) joins the
  upper legs of the two level-1 isometries;
* the isometry row of level i maps each level-(i-1) leg j to two level-i
  legs (2j-1, 2j) through ``gamma[j, i]``;
* the unitary row of level i entangles neighbouring isometry outputs:
  ``chi[j, i]`` acts on legs (2j, 2j+1), with leg arithmetic modulo the row
  width 2**(i+1), so chi[2**i, i] wraps around the ring;
* the lower legs of the level-ell unitary row are the physical sites 1..L.

Leg dimensions follow dim(i) = min(m, d**(ell-i+1)) for the level-i legs,
with dim(0) = min(m, d**(ell+1)) for the two top legs.

Tensor conventions (part of the on-disk contract)
-------------------------------------------------
* ``chi``   : 4 legs (a1, a2, b1, b2) — two lower legs then two upper legs,
  all of dim(i); unitary when matricized ((a1,a2),(b1,b2)).
* ``gamma`` : 3 legs (b1, b2, t) — two lower legs of dim(i), then the upper
  leg of dim(i-1); isometric columns: gamma^dagger gamma = identity.
* ``lam``   : float64 vector of length dim(0).

In translation-invariant (TI) mode a single chi and gamma are stored per
level and shared across all positions of that row.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

CHI_LEGS = ("a1", "a2", "b1", "b2")
GAMMA_LEGS = ("b1", "b2", "t")


class GeometryError(ValueError):
    """Inconsistent or unsupported layer geometry."""


@dataclass(frozen=True)
class MeraGeometry:
    """Chain geometry: ``ell`` layers, local dimension ``d``, bond cap ``m``."""

    ell: int
    d: int = 2
    m: int = 4

    def __post_init__(self):
        if self.ell < 1:
            raise GeometryError(f"need at least one layer, got ell={self.ell}")
        if self.d < 2:
            raise GeometryError(f"local dimension must be >= 2, got d={self.d}")
        if self.m < self.d:
            raise GeometryError(
                f"bond cap must be at least the local dimension "
                f"(no entanglement capacity below d): m={self.m} < d={self.d}"
            )

    @property
    def L(self) -> int:
        return 2 ** (self.ell + 1)

    def level_dim(self, i: int) -> int:
        """Dimension of the level-i legs; i = 0 addresses the two top legs."""
        if not 0 <= i <= self.ell:
            raise GeometryError(f"level {i} outside 0..{self.ell}")
        return min(self.m, self.d ** (self.ell - i + 1))

    def width(self, i: int) -> int:
        """Number of legs below the level-i unitary row (2 at i = 0)."""
        return 2 ** (i + 1)

    def positions(self, i: int) -> int:
        """Number of chi (equally, gamma) tensors in row i."""
        return 2**i


class MeraState:
    """Container for the layered tensors.  Mutated in place by updates."""

    def __init__(self, geometry: MeraGeometry, chis, gammas, lam, ti: bool = False):
        self.geometry = geometry
        self.ti = ti
        self._chis = chis      # level -> list[Tensor]
        self._gammas = gammas  # level -> list[Tensor]
        self.lam = np.asarray(lam, dtype=np.float64)

    # -- accessors ---------------------------------------------------------

    def _slot(self, i: int, j: int) -> int:
        if not 1 <= i <= self.geometry.ell:
            raise GeometryError(f"level {i} outside 1..{self.geometry.ell}")
        n = self.geometry.positions(i)
        if not 1 <= j <= n:
            raise GeometryError(f"position {j} outside 1..{n} at level {i}")
        return 0 if self.ti else j - 1

    def chi(self, i: int, j: int) -> Tensor:
        s = self._slot(i, j)
        return self._chis[i][s]

    def gamma(self, i: int, j: int) -> Tensor:
        s = self._slot(i, j)
        return self._gammas[i][s]

    def set_chi(self, i: int, j: int, t: Tensor):
        s = self._slot(i, j)
        self._chis[i][s] = t

    def set_gamma(self, i: int, j: int, t: Tensor):
        s = self._slot(i, j)
        self._gammas[i][s] = t

    def stored_tensors(self):
        """Yield (kind, level, slot_position, tensor) for everything stored."""
        for i in range(1, self.geometry.ell + 1):
            for j, t in enumerate(self._chis[i], start=1):
                yield ("chi", i, j, t)
            for j, t in enumerate(self._gammas[i], start=1):
                yield ("gamma", i, j, t)

    def tensor_count(self) -> int:
        return sum(1 for _ in self.stored_tensors())

    def clone(self) -> "MeraState":
        chis = {i: [Tensor(t.array.copy(), t.legs) for t in row] for i, row in self._chis.items()}
        gammas = {i: [Tensor(t.array.copy(), t.legs) for t in row] for i, row in self._gammas.items()}
        return MeraState(self.geometry, chis, gammas, self.lam.copy(), ti=self.ti)

    def __repr__(self):
        g = self.geometry
        mode = "TI" if self.ti else "general"
        return f"MeraState(ell={g.ell}, d={g.d}, m={g.m}, L={g.L}, {mode})"


# -- construction ----------------------------------------------------------


def _complete_isometry(first_col: np.ndarray, ncols: int) -> np.ndarray:
    """Orthonormal columns starting from ``first_col``, completed by
    Gram-Schmidt over the canonical basis in order.  Deterministic."""
    dim = first_col.shape[0]
    cols = [first_col / np.linalg.norm(first_col)]
    for b in range(dim):
        if len(cols) == ncols:
            break
        v = np.zeros(dim, dtype=complex)
        v[b] = 1.0
        for c in cols:
            v -= c * (c.conj() @ v)
        nrm = np.linalg.norm(v)
        if nrm > 1e-10:
            v /= nrm
            # second pass for numerical orthogonality
            for c in cols:
                v -= c * (c.conj() @ v)
            cols.append(v / np.linalg.norm(v))
    if len(cols) != ncols:
        raise GeometryError("could not complete isometry columns")
    return np.stack(cols, axis=1)


def _identity_chi(dim: int) -> Tensor:
    return Tensor(np.eye(dim * dim, dtype=complex).reshape(dim, dim, dim, dim), CHI_LEGS)


def init_product(geometry: MeraGeometry, local_state=None, ti: bool = False) -> MeraState:
    """The exact product state ``local (x) local (x) ... (x) local``.

    All unitaries start as identities; each isometry's first column maps the
    upper basis state 0 to (local, local) — the physical local state at the
    bottom row, the basis state e0 at interior rows — with the remaining
    columns completed deterministically.  ``lam = (1, 0, ..., 0)``.
    """
    d = geometry.d
    if local_state is None:
        local = np.zeros(d, dtype=complex)
        local[0] = 1.0
    else:
        local = np.asarray(local_state, dtype=complex).reshape(d)
        local = local / np.linalg.norm(local)
    chis, gammas = {}, {}
    for i in range(1, geometry.ell + 1):
        di = geometry.level_dim(i)
        dup = geometry.level_dim(i - 1)
        if i == geometry.ell:
            first = np.kron(local, local)
        else:
            first = np.zeros(di * di, dtype=complex)
            first[0] = 1.0
        gcols = _complete_isometry(first, dup)
        gam = Tensor(gcols.reshape(di, di, dup), GAMMA_LEGS)
        n = 1 if ti else geometry.positions(i)
        chis[i] = [_identity_chi(di) for _ in range(n)]
        gammas[i] = [Tensor(gam.array.copy(), GAMMA_LEGS) for _ in range(n)]
    lam = np.zeros(geometry.level_dim(0), dtype=np.float64)
    lam[0] = 1.0
    return MeraState(geometry, chis, gammas, lam, ti=ti)


def random_state(geometry: MeraGeometry, rng, ti: bool = False) -> MeraState:
    """A random valid state: Haar-ish unitaries/isometries from QR of
    complex Gaussian matrices, and a random descending weight vector."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    def ginibre(r, c):
        return rng.standard_normal((r, c)) + 1j * rng.standard_normal((r, c))

    chis, gammas = {}, {}
    for i in range(1, geometry.ell + 1):
        di = geometry.level_dim(i)
        dup = geometry.level_dim(i - 1)
        n = 1 if ti else geometry.positions(i)
        row_c, row_g = [], []
        for _ in range(n):
            q, _ = np.linalg.qr(ginibre(di * di, di * di))
            row_c.append(Tensor(q.reshape(di, di, di, di), CHI_LEGS))
            q, _ = np.linalg.qr(ginibre(di * di, dup))
            row_g.append(Tensor(q.reshape(di, di, dup), GAMMA_LEGS))
        chis[i] = row_c
        gammas[i] = row_g
    lam = np.sort(rng.random(geometry.level_dim(0)) + 0.05)[::-1]
    lam = lam / np.linalg.norm(lam)
    return MeraState(geometry, chis, gammas, lam, ti=ti)


def ti_promote(state: MeraState) -> MeraState:
    """Translation-invariant view of a state: keep the position-1 tensors of
    every row and share them across the row."""
    if state.ti:
        return state.clone()
    chis = {i: [Tensor(state.chi(i, 1).array.copy(), CHI_LEGS)] for i in range(1, state.geometry.ell + 1)}
    gammas = {i: [Tensor(state.gamma(i, 1).array.copy(), GAMMA_LEGS)] for i in range(1, state.geometry.ell + 1)}
    return MeraState(state.geometry, chis, gammas, state.lam.copy(), ti=True)


# -- validation ------------------------------------------------------------


@dataclass
class ValidationReport:
    """Worst-case constraint violations; reporting only, never raising."""

    max_unitary_dev: float = 0.0
    max_isometry_dev: float = 0.0
    lambda_norm_dev: float = 0.0
    lambda_negative: float = 0.0
    dims_ok: bool = True
    messages: list = field(default_factory=list)

    def passed(self, tol: float = 1e-8) -> bool:
        return (
            self.dims_ok
            and self.max_unitary_dev <= tol
            and self.max_isometry_dev <= tol
            and self.lambda_norm_dev <= tol
            and self.lambda_negative <= tol
        )


def validate(state: MeraState) -> ValidationReport:
    """Check unitarity, isometry, weight normalization and the dimension law."""
    rep = ValidationReport()
    g = state.geometry
    for kind, i, j, t in state.stored_tensors():
        di = g.level_dim(i)
        dup = g.level_dim(i - 1)
        if kind == "chi":
            if t.dims != (di, di, di, di):
                rep.dims_ok = False
                rep.messages.append(f"chi[{j},{i}] dims {t.dims} != {(di, di, di, di)}")
                continue
            mat = t.array.reshape(di * di, di * di)
            dev = max(
                np.abs(mat.conj().T @ mat - np.eye(di * di)).max(),
                np.abs(mat @ mat.conj().T - np.eye(di * di)).max(),
            )
            if dev > rep.max_unitary_dev:
                rep.max_unitary_dev = float(dev)
        else:
            if t.dims != (di, di, dup):
                rep.dims_ok = False
                rep.messages.append(f"gamma[{j},{i}] dims {t.dims} != {(di, di, dup)}")
                continue
            mat = t.array.reshape(di * di, dup)
            dev = np.abs(mat.conj().T @ mat - np.eye(dup)).max()
            if dev > rep.max_isometry_dev:
                rep.max_isometry_dev = float(dev)
    if state.lam.shape != (g.level_dim(0),):
        rep.dims_ok = False
        rep.messages.append(f"lam length {state.lam.shape} != {g.level_dim(0)}")
    else:
        rep.lambda_norm_dev = float(abs(np.sum(state.lam**2) - 1.0))
        rep.lambda_negative = float(max(0.0, -state.lam.min()))
    return rep


# -- dense expansion -------------------------------------------------------


def _apply_pair(psi: np.ndarray, op: np.ndarray, p: int, q: int) -> np.ndarray:
    """Apply a (o1,o2,i1,i2) operator on ring legs p, q (1-based axes)."""
    out = np.tensordot(op, psi, axes=([2, 3], [p - 1, q - 1]))
    return np.moveaxis(out, [0, 1], [p - 1, q - 1])


def _grow_leg(psi: np.ndarray, gam: np.ndarray, p: int) -> np.ndarray:
    """Replace ring leg p by the two lower legs of an isometry."""
    out = np.tensordot(gam, psi, axes=([2], [p - 1]))
    return np.moveaxis(out, [0, 1], [p - 1, p])


def _expand(state: MeraState, stop_level: int, stop_kind: str) -> np.ndarray:
    """Contract the network from the top down to a juncture.

    stop_kind 'gamma' at level i: the vector on the level-i legs right below
    the isometry row (before the unitaries); 'chi' at level i: below the
    unitary row.  ('chi', 0) is the top: diag(lam) as a two-leg vector.
    ('chi', ell) is the physical state.
    """
    g = state.geometry
    lam = state.lam.astype(complex)
    if stop_level == 0:
        return np.diag(lam)
    g1 = state.gamma(1, 1).array
    g2 = state.gamma(1, 2).array
    psi = np.einsum("abs,s,cds->abcd", g1, lam, g2)
    for i in range(1, g.ell + 1):
        if i == stop_level and stop_kind == "gamma":
            return psi
        W = g.width(i)
        for j in range(1, g.positions(i) + 1):
            p = ((2 * j - 1) % W) + 1
            q = (2 * j % W) + 1
            psi = _apply_pair(psi, state.chi(i, j).array, p, q)
        if i == stop_level:
            return psi
        for j in range(1, W + 1):
            psi = _grow_leg(psi, state.gamma(i + 1, j).array, 2 * j - 1)
    raise GeometryError(f"juncture ({stop_kind}, {stop_level}) outside the network")


def expand_dense(state: MeraState) -> np.ndarray:
    """The full 2**L state vector (site 1 is the slowest index).  L <= 16."""
    g = state.geometry
    if g.L > 16:
        raise GeometryError(f"dense expansion capped at L = 16, got L = {g.L}")
    return _expand(state, g.ell, "chi").reshape(-1)


def expand_to_juncture(state: MeraState, level: int, kind: str) -> np.ndarray:
    """Dense vector at an internal juncture (diagnostic / oracle use).

    kind 'gamma' requires 1 <= level <= ell; kind 'chi' allows level 0
    (the top weights) through ell (the physical state).
    """
    g = state.geometry
    if kind not in ("gamma", "chi"):
        raise GeometryError(f"kind must be 'gamma' or 'chi', got {kind!r}")
    lo = 1 if kind == "gamma" else 0
    if not lo <= level <= g.ell:
        raise GeometryError(f"level {level} outside {lo}..{g.ell} for kind {kind!r}")
    return _expand(state, level, kind)
