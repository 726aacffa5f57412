"""Causal cones: membership, reduced density matrices, environments.

A two-site gate on bond (k, k+1) influences only a narrow cone of tensors
on its way to the top of the network.  Per level the cone contains at most
two unitaries or three isometries; everything outside cancels against its
own adjoint when bra and ket share the out-of-cone tensors.

Membership is derived by support propagation.  Let S be the set of active
legs below the unitary row of level i (at the bottom, the two gate sites).
The unitary row tiles legs as chi[j] <-> (2j, 2j+1) modulo the row width;
every tile touching S joins the cone, and the active legs widen to the full
tiles.  The isometry row tiles legs as gamma[j] <-> (2j-1, 2j); touched
isometries join the cone and the active legs at level i-1 are their upper
positions.  Starting from two adjacent sites this yields 1-2 unitaries and
2-3 isometries per level, alternating with bond parity.

All cone contractions run through cached einsum plans; each plan knows its
exact multiply-add count, so operation counting (see :func:`count_ops`)
costs nothing at runtime.

Index-order conventions used throughout:

* a density object ``rho`` at a juncture with legs ``(p1..pn)`` has axes
  ``[ket p1..pn, bra p1..pn]``;
* an effective operator has axes ``[bra out legs, ket in legs]``, so a
  physical gate tensor (o1, o2, i1, i2) is already in operator order;
* environments carry exactly the legs of the tensor they are the
  environment of, such that fidelity = sum(conj(tensor) * environment).
"""

from __future__ import annotations

import itertools
import string
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import opt_einsum

from .state import CHI_LEGS, GAMMA_LEGS, MeraGeometry
from .tensor import Tensor


class ConeError(ValueError):
    """Invalid cone request (bad bond, level, or target)."""


# -- operation counting ----------------------------------------------------

_counter = {"enabled": False, "flops": 0}


@dataclass
class OpCount:
    """Multiply-add total accumulated inside a :func:`count_ops` block."""

    flops: int = 0


@contextmanager
def count_ops():
    """Count engine multiply-adds: ``with count_ops() as c: ...; c.flops``."""
    holder = OpCount()
    prev = (_counter["enabled"], _counter["flops"])
    _counter["enabled"], _counter["flops"] = True, 0
    try:
        yield holder
    finally:
        holder.flops = _counter["flops"]
        _counter["enabled"], _counter["flops"] = prev


# -- cone geometry ---------------------------------------------------------


@dataclass(frozen=True)
class LevelCone:
    """Cone membership at one level.

    ``alpha_in``:  active legs below this level's unitary row (ring order).
    ``chi_pos``:   unitary positions in the cone.
    ``beta_in``:   all legs of the in-cone unitaries (between the rows).
    ``gamma_pos``: isometry positions in the cone; equally the active legs
                   one level up.
    """

    level: int
    alpha_in: tuple
    chi_pos: tuple
    beta_in: tuple
    gamma_pos: tuple


def _chi_tile(p: int, n: int) -> int:
    """Unitary position whose tile (2j, 2j+1) contains leg p (1..2n)."""
    j = p // 2
    return j if j >= 1 else n


def _chi_legs(j: int, W: int):
    return ((2 * j - 1) % W) + 1, (2 * j % W) + 1


def _gamma_tile(p: int) -> int:
    """Isometry position whose tile (2j-1, 2j) contains leg p."""
    return (p + 1) // 2


def _level_cone(level: int, support):
    W = 2 ** (level + 1)
    n = 2**level
    chi_pos = []
    for p in support:
        j = _chi_tile(p, n)
        if j not in chi_pos:
            chi_pos.append(j)
    beta_in = []
    for j in chi_pos:
        beta_in.extend(_chi_legs(j, W))
    gamma_pos = []
    for p in beta_in:
        j = _gamma_tile(p)
        if j not in gamma_pos:
            gamma_pos.append(j)
    return LevelCone(
        level=level,
        alpha_in=tuple(support),
        chi_pos=tuple(chi_pos),
        beta_in=tuple(beta_in),
        gamma_pos=tuple(gamma_pos),
    )


class CausalCone:
    """The cone of one physical bond, bottom level ``ell`` up to the top."""

    def __init__(self, geometry: MeraGeometry, bond: int):
        self.geometry = geometry
        self.bond = bond
        levels = {}
        support = (bond, bond % geometry.L + 1)
        for i in range(geometry.ell, 0, -1):
            lc = _level_cone(i, support)
            levels[i] = lc
            support = lc.gamma_pos
        self.levels = levels
        self.top_legs = support  # positions of the two top isometries
        self._plans = {}
        self.engine = ConeEngine(self)

    @property
    def sites(self):
        return self.levels[self.geometry.ell].alpha_in

    def __repr__(self):
        counts = {i: (len(lc.chi_pos), len(lc.gamma_pos)) for i, lc in self.levels.items()}
        return f"CausalCone(bond={self.bond}, (chi,gamma) per level={counts})"


@lru_cache(maxsize=None)
def _cone_cached(ell: int, d: int, m: int, bond: int) -> CausalCone:
    return CausalCone(MeraGeometry(ell=ell, d=d, m=m), bond)


def cone_of(geometry: MeraGeometry, bond: int) -> CausalCone:
    """The causal cone of physical bond (bond, bond+1), 1-based, wrapping."""
    if not 1 <= bond <= geometry.L:
        raise ConeError(f"bond {bond} outside 1..{geometry.L}")
    return _cone_cached(geometry.ell, geometry.d, geometry.m, bond)


# -- einsum plans ----------------------------------------------------------


# Pairwise contraction orders found once per (subscripts, shapes) and shared
# across cones: cones of the same alignment class build identical plans, and
# the exhaustive dynamic-programming search is worth amortizing.
_PATHS: dict = {}


class _Plan:
    __slots__ = ("subs", "path", "flops")

    def __init__(self, subs, arrays):
        self.subs = subs
        shapes = tuple(a.shape for a in arrays)
        hit = _PATHS.get((subs, shapes))
        if hit is None:
            order = opt_einsum.contract_path(subs, *arrays, optimize="dp")[0]
            path = ["einsum_path"] + [tuple(step) for step in order]
            hit = (path, _path_flops(subs, shapes, path))
            _PATHS[(subs, shapes)] = hit
        self.path, self.flops = hit


def _path_flops(subs, shapes, path):
    inp, out = subs.split("->")
    terms = [list(t) for t in inp.split(",")]
    dims = {}
    for t, sh in zip(terms, shapes):
        for c, d in zip(t, sh):
            dims[c] = d
    terms = [set(t) for t in terms]
    total = 0
    for step in path[1:] if path and path[0] == "einsum_path" else path:
        popped = [terms.pop(i) for i in sorted(step, reverse=True)]
        involved = set().union(*popped)
        needed = set(out)
        for t in terms:
            needed |= t
        total += int(np.prod([dims[c] for c in involved], dtype=np.int64))
        terms.append(involved & needed)
    return total


def _run(plan: _Plan, arrays):
    if _counter["enabled"]:
        _counter["flops"] += plan.flops
    return np.einsum(plan.subs, *arrays, optimize=plan.path)


class ConeEngine:
    """Plan-cached contractions for one cone.

    States are anything exposing ``chi(i, j)``, ``gamma(i, j)`` and ``lam``
    — full states and candidate overlays alike.  The juncture walk assumes
    bra and ket agree outside the cone; that is the regime in which tracing
    the exiting legs is exact.
    """

    def __init__(self, cone: CausalCone):
        self.cone = cone
        self._plans = cone._plans

    # symbol helper: one letter per abstract edge
    @staticmethod
    def _alloc():
        sym = {}
        letters = itertools.chain(string.ascii_lowercase, string.ascii_uppercase)

        def s(kind, p):
            k = (kind, p)
            if k not in sym:
                sym[k] = next(letters)
            return sym[k]

        return s

    def _plan(self, key, subs_fn, arrays):
        plan = self._plans.get(key)
        if plan is None:
            plan = _Plan(subs_fn(), arrays)
            self._plans[key] = plan
        return _run(plan, arrays)

    # -- juncture descents -------------------------------------------------

    def rho_top(self, ket, bra):
        arrays = [np.diag(ket.lam.astype(complex)), np.diag(bra.lam.astype(complex)).conj()]
        return self._plan(("rho0",), lambda: "ab,cd->abcd", arrays)

    def descend_gamma(self, i, rho, ket, bra):
        """(chi, i-1) juncture -> (gamma, i) juncture."""
        lc = self.cone.levels[i]
        beta = set(lc.beta_in)
        arrays = (
            [rho]
            + [ket.gamma(i, j).array for j in lc.gamma_pos]
            + [bra.gamma(i, j).array.conj() for j in lc.gamma_pos]
        )

        def subs():
            s = self._alloc()
            bket = lambda p: s("bk" if p in beta else "bd", p)
            bbra = lambda p: s("bb" if p in beta else "bd", p)
            terms = ["".join(s("tk", j) for j in lc.gamma_pos) + "".join(s("tb", j) for j in lc.gamma_pos)]
            for j in lc.gamma_pos:
                terms.append(bket(2 * j - 1) + bket(2 * j) + s("tk", j))
            for j in lc.gamma_pos:
                terms.append(bbra(2 * j - 1) + bbra(2 * j) + s("tb", j))
            out = "".join(s("bk", p) for p in lc.beta_in) + "".join(s("bb", p) for p in lc.beta_in)
            return ",".join(terms) + "->" + out

        return self._plan(("dg", i), subs, arrays)

    def descend_level(self, i, rho_above, ket, bra):
        """Juncture above level i -> juncture below its unitary row.

        Both rows of the level go into one plan.  Between the rows sit up to
        four active legs per side; an explicit density object there would be
        the largest tensor in the engine, so the contraction order is left
        free to interleave isometries and unitaries and never form it.  The
        half-step through the isometry row alone (:meth:`descend_gamma`)
        stays available for diagnostics.
        """
        lc = self.cone.levels[i]
        W = self.cone.geometry.width(i)
        alpha = set(lc.alpha_in)
        beta = set(lc.beta_in)
        arrays = (
            [rho_above]
            + [ket.gamma(i, j).array for j in lc.gamma_pos]
            + [bra.gamma(i, j).array.conj() for j in lc.gamma_pos]
            + [ket.chi(i, j).array for j in lc.chi_pos]
            + [bra.chi(i, j).array.conj() for j in lc.chi_pos]
        )

        def subs():
            s = self._alloc()
            bket = lambda p: s("bk" if p in beta else "bd", p)
            bbra = lambda p: s("bb" if p in beta else "bd", p)
            aket = lambda p: s("ak" if p in alpha else "ad", p)
            abra = lambda p: s("ab" if p in alpha else "ad", p)
            terms = ["".join(s("tk", j) for j in lc.gamma_pos) + "".join(s("tb", j) for j in lc.gamma_pos)]
            for j in lc.gamma_pos:
                terms.append(bket(2 * j - 1) + bket(2 * j) + s("tk", j))
            for j in lc.gamma_pos:
                terms.append(bbra(2 * j - 1) + bbra(2 * j) + s("tb", j))
            for j in lc.chi_pos:
                p1, p2 = _chi_legs(j, W)
                terms.append(aket(p1) + aket(p2) + s("bk", p1) + s("bk", p2))
            for j in lc.chi_pos:
                p1, p2 = _chi_legs(j, W)
                terms.append(abra(p1) + abra(p2) + s("bb", p1) + s("bb", p2))
            out = "".join(s("ak", p) for p in lc.alpha_in) + "".join(s("ab", p) for p in lc.alpha_in)
            return ",".join(terms) + "->" + out

        return self._plan(("dl", i), subs, arrays)

    # -- one level as a whole: environments, fidelity, ascent --------------
    #
    # Environments, the per-level fidelity and the operator ascent all share
    # one network: juncture above the level, both rows ket and bra, and the
    # effective operator arriving from below.  Staging that network at the
    # mid-level legs would cost a power of the bond cap more than the best
    # interleaved order, so each quantity is a single plan over the whole
    # level and the order search runs across both rows at once.

    def _level_terms(self, s, lc, W):
        """Subscript terms for [rho_above, ueff, ket gammas, bra gammas,
        ket chis, bra chis]; callers drop the omitted bra entry."""
        alpha = set(lc.alpha_in)
        beta = set(lc.beta_in)
        bket = lambda p: s("bk" if p in beta else "bd", p)
        bbra = lambda p: s("bb" if p in beta else "bd", p)
        aket = lambda p: s("ak" if p in alpha else "ad", p)
        abra = lambda p: s("ab" if p in alpha else "ad", p)
        rho = "".join(s("tk", j) for j in lc.gamma_pos) + "".join(s("tb", j) for j in lc.gamma_pos)
        ueff = "".join(s("ab", y) for y in lc.alpha_in) + "".join(s("ak", x) for x in lc.alpha_in)
        gk = {j: bket(2 * j - 1) + bket(2 * j) + s("tk", j) for j in lc.gamma_pos}
        gb = {j: bbra(2 * j - 1) + bbra(2 * j) + s("tb", j) for j in lc.gamma_pos}
        ck, cb = {}, {}
        for j in lc.chi_pos:
            p1, p2 = _chi_legs(j, W)
            ck[j] = aket(p1) + aket(p2) + s("bk", p1) + s("bk", p2)
            cb[j] = abra(p1) + abra(p2) + s("bb", p1) + s("bb", p2)
        return rho, ueff, gk, gb, ck, cb

    def _level_net(self, i, rho_above, ueff, ket, bra, omit_kind, omit):
        lc = self.cone.levels[i]
        W = self.cone.geometry.width(i)
        arrays = [rho_above, ueff]
        arrays += [ket.gamma(i, j).array for j in lc.gamma_pos]
        arrays += [
            bra.gamma(i, j).array.conj()
            for j in lc.gamma_pos
            if not (omit_kind == "gamma" and j == omit)
        ]
        arrays += [ket.chi(i, j).array for j in lc.chi_pos]
        arrays += [
            bra.chi(i, j).array.conj()
            for j in lc.chi_pos
            if not (omit_kind == "chi" and j == omit)
        ]

        def subs():
            s = self._alloc()
            rho, u, gk, gb, ck, cb = self._level_terms(s, lc, W)
            terms = [rho, u]
            terms += [gk[j] for j in lc.gamma_pos]
            terms += [gb[j] for j in lc.gamma_pos if not (omit_kind == "gamma" and j == omit)]
            terms += [ck[j] for j in lc.chi_pos]
            terms += [cb[j] for j in lc.chi_pos if not (omit_kind == "chi" and j == omit)]
            if omit_kind == "chi":
                out = cb[omit]
            elif omit_kind == "gamma":
                out = gb[omit]
            else:
                out = ""
            return ",".join(terms) + "->" + out

        key = ("lf", i) if omit_kind is None else (omit_kind[0] + "e", i, omit)
        return self._plan(key, subs, arrays)

    def chi_env(self, i, rho_above, ueff, ket, bra, target):
        """Environment of the bra unitary at ``target``, legs (a1, a2, b1, b2)."""
        return self._level_net(i, rho_above, ueff, ket, bra, "chi", target)

    def gamma_env(self, i, rho_above, ueff, ket, bra, target):
        """Environment of the bra isometry at ``target``, legs (b1, b2, t)."""
        return self._level_net(i, rho_above, ueff, ket, bra, "gamma", target)

    def level_fidelity(self, i, rho_above, ueff, ket, bra):
        """<bra| gate |ket> evaluated by closing the network at level i."""
        return complex(self._level_net(i, rho_above, ueff, ket, bra, None, None))

    def ascend_level(self, i, ueff, ket, bra):
        """Effective operator below the unitary row of level i -> operator
        on the isometry tops, i.e. at the juncture above the level."""
        lc = self.cone.levels[i]
        W = self.cone.geometry.width(i)
        arrays = [ueff]
        arrays += [ket.gamma(i, j).array for j in lc.gamma_pos]
        arrays += [bra.gamma(i, j).array.conj() for j in lc.gamma_pos]
        arrays += [ket.chi(i, j).array for j in lc.chi_pos]
        arrays += [bra.chi(i, j).array.conj() for j in lc.chi_pos]

        def subs():
            s = self._alloc()
            _, u, gk, gb, ck, cb = self._level_terms(s, lc, W)
            terms = [u]
            terms += [gk[j] for j in lc.gamma_pos]
            terms += [gb[j] for j in lc.gamma_pos]
            terms += [ck[j] for j in lc.chi_pos]
            terms += [cb[j] for j in lc.chi_pos]
            out = "".join(s("tb", j) for j in lc.gamma_pos) + "".join(s("tk", j) for j in lc.gamma_pos)
            return ",".join(terms) + "->" + out

        return self._plan(("al", i), subs, arrays)

    # -- the top -----------------------------------------------------------

    def top_ket(self, ket):
        arrays = [ket.gamma(1, 1).array, ket.lam.astype(complex), ket.gamma(1, 2).array]
        return self._plan(("topk",), lambda: "abs,s,cds->abcd", arrays)

    def top_b(self, ueff, ket, bra):
        """Joint environment of (gamma[1,1], lam, gamma[1,2]) given the
        operator below level 1's unitary row.  Canonical legs beta 1..4;
        fidelity = sum(conj(T_bra) * B) with T the combined top tensor."""
        lc = self.cone.levels[1]
        W = self.cone.geometry.width(1)
        alpha = set(lc.alpha_in)
        beta = set(lc.beta_in)
        arrays = [self.top_ket(ket), ueff]
        arrays += [ket.chi(1, j).array for j in lc.chi_pos]
        arrays += [bra.chi(1, j).array.conj() for j in lc.chi_pos]

        def subs():
            s = self._alloc()
            bket = lambda p: s("bk" if p in beta else "bd", p)
            bbra = lambda p: s("bb" if p in beta else "bd", p)
            aket = lambda p: s("ak" if p in alpha else "ad", p)
            abra = lambda p: s("ab" if p in alpha else "ad", p)
            terms = ["".join(bket(p) for p in (1, 2, 3, 4))]
            terms.append("".join(s("ab", y) for y in lc.alpha_in) + "".join(s("ak", x) for x in lc.alpha_in))
            for j in lc.chi_pos:
                p1, p2 = _chi_legs(j, W)
                terms.append(aket(p1) + aket(p2) + s("bk", p1) + s("bk", p2))
            for j in lc.chi_pos:
                p1, p2 = _chi_legs(j, W)
                terms.append(abra(p1) + abra(p2) + s("bb", p1) + s("bb", p2))
            out = "".join(bbra(p) for p in (1, 2, 3, 4))
            return ",".join(terms) + "->" + out

        return self._plan(("tb",), subs, arrays)


# -- public wrappers -------------------------------------------------------


@dataclass
class ConeDensityMatrix:
    """Reduced density object at a cone juncture.

    ``tensor`` axes: ket legs then bra legs, both in ``legs`` order.  For a
    single state (bra = ket) this is Hermitian, positive semidefinite and
    unit trace.
    """

    level: int
    kind: str
    legs: tuple
    tensor: Tensor

    def matrix(self) -> np.ndarray:
        n = len(self.legs)
        dims = self.tensor.dims
        rows = int(np.prod(dims[:n], dtype=np.int64))
        return self.tensor.array.reshape(rows, rows)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix()))


def _juncture_legs(cone: CausalCone, level: int, kind: str):
    if level == 0:
        return cone.top_legs
    lc = cone.levels[level]
    return lc.beta_in if kind == "gamma" else lc.alpha_in


def _rho_walk(ket, bra, cone, level, kind):
    eng = cone.engine
    rho = eng.rho_top(ket, bra)
    if level == 0:
        return rho
    for i in range(1, cone.geometry.ell + 1):
        if (i, "gamma") == (level, kind):
            return eng.descend_gamma(i, rho, ket, bra)
        rho = eng.descend_level(i, rho, ket, bra)
        if (i, "chi") == (level, kind):
            return rho
    raise ConeError(f"juncture ({kind!r}, {level}) not reached")


def descend_rho(state, cone: CausalCone, level: int, kind: str = "chi") -> ConeDensityMatrix:
    """Reduced density object of ``state`` at a cone juncture.

    kind 'gamma': directly below the isometry row of ``level`` (on the legs
    feeding the in-cone unitaries); kind 'chi': below the unitary row — at
    ``level == ell`` this is the two-site density matrix of the bond.
    Level 0 with kind 'chi' is the top weight pair.
    """
    if kind not in ("gamma", "chi"):
        raise ConeError(f"kind must be 'gamma' or 'chi', got {kind!r}")
    lo = 1 if kind == "gamma" else 0
    if not lo <= level <= cone.geometry.ell:
        raise ConeError(f"level {level} outside {lo}..{cone.geometry.ell} for {kind!r}")
    arr = _rho_walk(state, state, cone, level, kind)
    return ConeDensityMatrix(
        level=level, kind=kind, legs=tuple(_juncture_legs(cone, level, kind)), tensor=Tensor(arr)
    )


def _gate_array(gate) -> np.ndarray:
    arr = gate.array if isinstance(gate, Tensor) else np.asarray(gate, dtype=complex)
    if arr.ndim != 4:
        raise ConeError(f"gate must have 4 legs (o1, o2, i1, i2), got {arr.ndim}")
    return arr


def _ueff_walk(ket, bra, cone, gate_arr, down_to):
    eng = cone.engine
    u = gate_arr
    for i in range(cone.geometry.ell, down_to, -1):
        u = eng.ascend_level(i, u, ket, bra)
    return u


def environment(ket, bra, cone: CausalCone, gate, target) -> Tensor:
    """Environment of one in-cone tensor in the fidelity <bra| gate |ket>.

    ``target`` is ``("chi", level, pos)``, ``("gamma", level, pos)`` or
    ``("top",)`` for the joint environment of the two top isometries and the
    weight vector (canonical legs beta 1..4).  ``bra`` may be None (= ket).
    Out-of-cone tensors of bra and ket must coincide; only then does the
    cone contraction equal the full fidelity network.
    """
    if bra is None:
        bra = ket
    eng = cone.engine
    garr = _gate_array(gate)
    kind = target[0]
    if kind == "top":
        u = _ueff_walk(ket, bra, cone, garr, 1)
        return Tensor(eng.top_b(u, ket, bra))
    _, level, pos = target
    if not 1 <= level <= cone.geometry.ell:
        raise ConeError(f"target level {level} outside 1..{cone.geometry.ell}")
    lc = cone.levels[level]
    rho_a = _rho_walk(ket, bra, cone, level - 1, "chi")
    u = _ueff_walk(ket, bra, cone, garr, level)
    if kind == "chi":
        if pos not in lc.chi_pos:
            raise ConeError(f"chi position {pos} not in the cone at level {level}")
        return Tensor(eng.chi_env(level, rho_a, u, ket, bra, pos), CHI_LEGS)
    if kind == "gamma":
        if pos not in lc.gamma_pos:
            raise ConeError(f"gamma position {pos} not in the cone at level {level}")
        return Tensor(eng.gamma_env(level, rho_a, u, ket, bra, pos), GAMMA_LEGS)
    raise ConeError(f"unknown target kind {kind!r}")


def cone_fidelity(ket, bra, cone: CausalCone, gate) -> complex:
    """<bra| gate |ket> via the cone (bra shares all out-of-cone tensors)."""
    if bra is None:
        bra = ket
    eng = cone.engine
    u = _ueff_walk(ket, bra, cone, _gate_array(gate), 1)
    b = eng.top_b(u, ket, bra)
    return complex(np.sum(b * eng.top_ket(bra).conj()))


# -- cost accounting -------------------------------------------------------


@dataclass(frozen=True)
class FlopsReport:
    """Closed-form multiply-add counts for the engine's contraction plans."""

    geometry: MeraGeometry
    env_flops: dict = field(repr=False)   # (kind, level) -> worst per-environment count
    max_env_flops: int = field(default=0)
    gate_flops: dict = field(default_factory=dict, repr=False)  # bond -> one update pass
    sweep_general: int = 0
    sweep_ti: int = 0


def _gate_pass_flops(state, cone) -> tuple[dict, int]:
    """Plan flops for one bottom-to-top pass of a gate update (one inner
    optimization per row), mirroring the update driver's default sequence."""
    from .model import ising_bond_term, two_site_gate  # local: avoid cycle at import

    eng = cone.engine
    g = cone.geometry
    gate = two_site_gate(ising_bond_term(1.0), 0.0).array
    per_env = {}
    with count_ops() as c:
        rho = {0: eng.rho_top(state, state)}
        for i in range(1, g.ell + 1):
            rho[i] = eng.descend_level(i, rho[i - 1], state, state)
        u = gate
        for i in range(g.ell, 0, -1):
            lc = cone.levels[i]
            for t in lc.chi_pos:
                with count_ops() as ce:
                    eng.chi_env(i, rho[i - 1], u, state, state, t)
                per_env[("chi", i)] = max(per_env.get(("chi", i), 0), ce.flops)
                _counter["flops"] += ce.flops
            if i > 1:
                for t in lc.gamma_pos:
                    with count_ops() as ge:
                        eng.gamma_env(i, rho[i - 1], u, state, state, t)
                    per_env[("gamma", i)] = max(per_env.get(("gamma", i), 0), ge.flops)
                    _counter["flops"] += ge.flops
                u = eng.ascend_level(i, u, state, state)
            else:
                with count_ops() as te:
                    eng.top_b(u, state, state)
                per_env[("top", 1)] = max(per_env.get(("top", 1), 0), te.flops)
                _counter["flops"] += te.flops
    return per_env, c.flops


def flops_estimate(geometry: MeraGeometry) -> FlopsReport:
    """Per-environment and per-sweep multiply-add counts.

    Counts come from the exact einsum plans the engine executes, so they are
    the closed-form costs of the chosen contraction order.  Asserts that the
    worst single-environment count scales no faster than the ninth power of
    the bond cap (doubling m multiplies it by at most 2**9).
    """
    from .state import init_product  # local import to avoid a cycle

    state = init_product(geometry)
    env_flops = {}
    gate_flops = {}
    for k in range(1, geometry.L + 1):
        per_env, total = _gate_pass_flops(state, cone_of(geometry, k))
        gate_flops[k] = total
        for key, v in per_env.items():
            env_flops[key] = max(env_flops.get(key, 0), v)
    max_env = max(env_flops.values())

    big = MeraGeometry(ell=geometry.ell, d=geometry.d, m=2 * geometry.m)
    big_env, _ = _gate_pass_flops(init_product(big), cone_of(big, 1))
    ratio = max(big_env.values()) / max(
        v for (kind, lvl), v in env_flops.items() if (kind, lvl) in big_env
    )
    if ratio > 2**9 * 1.001:
        raise ConeError(
            f"environment cost grew by {ratio:.1f}x when doubling m; "
            f"exceeds the ninth-power bound {2**9}"
        )
    return FlopsReport(
        geometry=geometry,
        env_flops=env_flops,
        max_env_flops=max_env,
        gate_flops=gate_flops,
        sweep_general=sum(gate_flops.values()),
        sweep_ti=gate_flops[1] + gate_flops[2],
    )
