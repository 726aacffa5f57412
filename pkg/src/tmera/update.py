"""Gate application by fidelity maximization inside the causal cone.

Applying a two-site gate means finding new cone tensors that maximize
F = <candidate| gate |state>.  The candidates enter F multilinearly, so the
driver alternates single-tensor updates: the environment B of a tensor is
the derivative of F with respect to its conjugate, and the best unitary
(isometry) given everything else is the polar factor of B.  Each such step
can only raise F, which makes per-gate fidelity trajectories monotone — a
property the tests lean on.

The sweep runs bottom-up.  While level i is being optimized, every row
above it still agrees between candidate and state, so the junctures above
are honest density matrices and can be computed once per pass; only the
juncture split by the level's own isometry row has to be refreshed when
that row moves.  At the top, the two isometries and the weight vector are
updated jointly from a Schmidt split of their shared environment.

Translation-invariant states share one unitary and one isometry per level.
There the environments of all in-cone copies are summed before the polar
step (the gradient with respect to the shared tensor), and the top update
symmetrizes the environment over the half-ring swap before extracting a
single shared isometry by linearized alternation.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import checkpoint_save
from .cones import ConeEngine, cone_of
from .model import GateSchedule, trotter_schedule
from .state import CHI_LEGS, GAMMA_LEGS, MeraState
from .tensor import Matricization, Tensor, polar_decompose


class UpdateError(RuntimeError):
    """Optimization produced a non-finite or degenerate result."""


@dataclass
class UpdatePolicy:
    """Knobs of the per-gate optimization.

    inner_sweeps: alternations of (unitary row, isometry row) per level.
    inner_tol: stop a level early once the fidelity moves less than this.
    level_repeats: extra bottom-to-top passes over the cone per gate.
    update_chis: whether unitary rows are optimized at all.
    disentangler_start: evolution time before unitary rows join in; until
        then only isometries and the top move (identity unitaries are kept).
    ti_cone_samples: shared-tensor mode only — number of representative
        bonds whose cone environments are averaged per update.  A sweep's
        gates all look alike to shared tensors, but a bond's alignment
        relative to the tiling differs with position; sampling several
        alignment classes keeps the update fair to all of them.  1 recovers
        the bare single-cone rule.  Samples are capped at the L/4 distinct
        classes per parity (bonds half a ring apart are exactly equivalent).
    ti_balance: shared-tensor mode only — rescale each level's summed
        environment to the weights of a whole gate layer.  A cone
        environment of a shared tensor mixes two parts: the gate signal,
        and an identity-network pull from the other tensors that by itself
        would keep the tensor where it is.  One shared update stands in
        for a full layer of L/2 gates, whose product carries the pull
        once per copy but gate signal from every bond; summing R sampled
        cones as-is underweights the signal by 2R/L, the candidate trails
        the evolved state by that factor each sweep, and the lag settles
        into a step-size-independent energy offset.  The balanced rule
        also computes each cone's identity-gate environment (the pure
        pull of the same copies) and forms  B_gate + (w - 1) B_id  with
        w = 2 R 2^i / (L n_in), which restores the layer's gate-to-pull
        ratio at every level.  Identity gates still reproduce the state
        exactly: B_gate and B_id coincide, leaving a pure pull whose
        polar factor is the current tensor.
    """

    inner_sweeps: int = 2
    inner_tol: float = 1e-9
    level_repeats: int = 1
    update_chis: bool = True
    disentangler_start: float = 0.0
    ti_cone_samples: int = 4
    ti_balance: bool = True


@dataclass
class GateUpdateReport:
    bond: int
    fidelity: float
    trajectory: list = field(repr=False)  # (row, level, fidelity) in update order
    absorbed_norm: float = float("nan")  # top-step weight norm folded into lam


# upper pair (a1, a2) against lower pair (b1, b2); lower pair against top
_CHI_SPLIT = Matricization((0, 1), (2, 3))
_GAMMA_SPLIT = Matricization((0, 1), (2,))


def _polar_chi(b: np.ndarray) -> Tensor:
    v, _ = polar_decompose(Tensor(b, CHI_LEGS), _CHI_SPLIT)
    return v


def _polar_gamma(b: np.ndarray) -> Tensor:
    v, _ = polar_decompose(Tensor(b, GAMMA_LEGS), _GAMMA_SPLIT)
    return v


def _fix_column_phases(g1: np.ndarray, g2: np.ndarray) -> None:
    """Rotate paired columns so the dominant entry of g1 is real positive.

    The product g1[:, c] (x) g2[:, c] is untouched, so the state does not
    change; the point is a deterministic gauge for comparisons and storage.
    """
    for c in range(g1.shape[1]):
        col = g1[:, c]
        k = int(np.argmax(np.abs(col)))
        a = col[k]
        if abs(a) > 1e-12:
            ph = a / abs(a)
            g1[:, c] *= ph.conjugate()
            g2[:, c] *= ph


def _top_update_general(bra: MeraState, b_top: np.ndarray) -> float:
    """Joint Schmidt update of (gamma[1,1], lam, gamma[2,1]); returns the
    fidelity reached, which is the norm of the kept Schmidt weights."""
    r0 = bra.geometry.level_dim(0)
    r1 = bra.geometry.level_dim(1)
    mat = b_top.reshape(r1 * r1, r1 * r1)
    u, s, vh = np.linalg.svd(mat)
    g1 = u[:, :r0].copy()
    # the second isometry enters the fidelity conjugated, so it is the plain
    # transpose of the right factor, not the adjoint
    g2 = vh[:r0, :].T.copy()
    lam = s[:r0].copy()
    norm = float(np.linalg.norm(lam))
    if not np.isfinite(norm) or norm <= 0.0:
        raise UpdateError("top environment has no weight; fidelity collapsed")
    _fix_column_phases(g1, g2)
    bra.set_gamma(1, 1, Tensor(g1.reshape(r1, r1, r0), GAMMA_LEGS))
    bra.set_gamma(1, 2, Tensor(g2.reshape(r1, r1, r0), GAMMA_LEGS))
    bra.lam = lam / norm
    return norm


def _top_update_ti(bra: MeraState, b_top: np.ndarray, iters: int = 4) -> float:
    """Shared-isometry top update.

    The environment is symmetrized over the swap of the two top branches
    (the average of the environments of a bond and its half-ring partner).
    With one isometry G on both branches the fidelity is quadratic in G, so
    it is maximized by linearized alternation: polar step on the gradient,
    then the weights from the diagonal overlap with phases absorbed into G.
    """
    r0 = bra.geometry.level_dim(0)
    r1 = bra.geometry.level_dim(1)
    sym = 0.5 * (b_top + b_top.transpose(2, 3, 0, 1))
    mat = sym.reshape(r1 * r1, r1 * r1)
    g = bra.gamma(1, 1).array.reshape(r1 * r1, r0).copy()
    lam = bra.lam.astype(float).copy()
    fid = 0.0
    for _ in range(iters):
        grad = (mat @ g.conj()) * lam[None, :]
        u, _, vh = np.linalg.svd(grad, full_matrices=False)
        g = u @ vh
        w = np.einsum("xs,xy,ys->s", g.conj(), mat, g.conj())
        absw = np.abs(w)
        norm = float(np.linalg.norm(absw))
        if not np.isfinite(norm) or norm <= 0.0:
            raise UpdateError("top environment has no weight; fidelity collapsed")
        phase = np.where(absw > 1e-300, w / np.where(absw > 1e-300, absw, 1.0), 1.0)
        g = g * np.sqrt(phase)[None, :]
        lam = absw / norm
        fid = norm
    bra.set_gamma(1, 1, Tensor(g.reshape(r1, r1, r0), GAMMA_LEGS))
    bra.lam = lam
    return fid


def _junctures(eng, ket, bra, ell):
    """Density objects below each unitary row, top down; rho[i] sits between
    level i and level i+1 and is valid while level i+1 and below change."""
    rho = {0: eng.rho_top(ket, bra)}
    r = rho[0]
    for i in range(1, ell + 1):
        r = eng.descend_level(i, r, ket, bra)
        rho[i] = r
    return rho


def _finish(bra, bond, traj):
    fidelity = traj[-1][2]
    if not np.isfinite(fidelity):
        raise UpdateError(f"non-finite fidelity after gate on bond {bond}")
    tops = [v for (row, _, v) in traj if row == "top"]
    return bra, GateUpdateReport(bond=bond, fidelity=fidelity, trajectory=traj,
                                 absorbed_norm=tops[-1] if tops else float("nan"))


def apply_gate(state: MeraState, gate, bond: int, *, policy: UpdatePolicy | None = None,
               update_chis: bool | None = None, ti_phase: int = 0):
    """Absorb a two-site gate on (bond, bond+1) into the state.

    Returns ``(new_state, GateUpdateReport)``.  The input state is left
    untouched; the report's trajectory lists the fidelity after every row
    update, bottom level first.  ``absorbed_norm`` on the report is the
    weight-vector norm folded away at the final top update — for euclidean
    gates a running estimate of exp(-dt * E_bond).
    """
    policy = policy or UpdatePolicy()
    if update_chis is None:
        update_chis = policy.update_chis
    geo = state.geometry
    garr = gate.array if isinstance(gate, Tensor) else np.asarray(gate, dtype=complex)
    d = geo.d
    if garr.shape != (d, d, d, d):
        raise UpdateError(f"gate shape {garr.shape} does not match site dimension {d}")
    if state.ti:
        return _apply_gate_ti(state, garr, bond, policy, update_chis, ti_phase)

    cone = cone_of(geo, bond)
    eng = cone.engine
    ket = state
    bra = state.clone()
    traj = []

    for _ in range(max(1, policy.level_repeats)):
        rho = _junctures(eng, ket, bra, geo.ell)
        u = garr
        for i in range(geo.ell, 0, -1):
            lc = cone.levels[i]
            rho_above = rho[i - 1]
            f_prev = None
            for _ in range(max(1, policy.inner_sweeps)):
                if update_chis:
                    for t in lc.chi_pos:
                        b = eng.chi_env(i, rho_above, u, ket, bra, t)
                        new = _polar_chi(b)
                        bra.set_chi(i, t, new)
                        f = np.vdot(new.array, b)
                    traj.append(("chi", i, float(np.real(f))))
                if i > 1:
                    for t in lc.gamma_pos:
                        b = eng.gamma_env(i, rho_above, u, ket, bra, t)
                        new = _polar_gamma(b)
                        bra.set_gamma(i, t, new)
                        f = np.vdot(new.array, b)
                    traj.append(("gamma", i, float(np.real(f))))
                else:
                    b_top = eng.top_b(u, ket, bra)
                    f = _top_update_general(bra, b_top)
                    traj.append(("top", 0, float(f)))
                f_now = traj[-1][2]
                if f_prev is not None and abs(f_now - f_prev) < policy.inner_tol:
                    break
                f_prev = f_now
            if i > 1:
                u = eng.ascend_level(i, u, ket, bra)

    return _finish(bra, bond, traj)


def ti_representative_bonds(geometry, bond: int, samples: int, phase: int = 0) -> tuple:
    """Bonds whose cones stand in for a whole gate layer of a shared-tensor
    state.  Same parity as ``bond``, consecutive alignment classes, capped at
    the L/4 distinct classes (a bond and its half-ring translate share all
    tensors *and* all juncture positions, so their cones are identical).

    ``phase`` rotates the window of sampled classes.  When fewer classes are
    sampled than exist, a fixed window starves the rest — their alignments
    never enter any environment and drift arbitrarily far.  Advancing the
    phase every absorb visits all classes round-robin, so each stays fresh
    within ``L/4`` absorbs while the per-update cost keeps its cap."""
    L = geometry.L
    classes = max(1, L // 4)
    n = max(1, min(int(samples), classes))
    return tuple(((bond - 1 + 2 * ((phase + j) % classes)) % L) + 1 for j in range(n))


def _apply_gate_ti(state: MeraState, garr: np.ndarray, bond: int,
                   policy: UpdatePolicy, update_chis: bool, ti_phase: int = 0):
    """Shared-tensor gate absorption with representative-cone averaging.

    One polar step per level moves the single shared unitary (isometry); its
    environment is the sum over every in-cone copy in every representative
    cone, i.e. the gradient of the summed representative fidelities.  Each
    representative keeps its own junctures and its own ascended gate, since
    those depend on where the bond sits relative to the tiling.
    """
    geo = state.geometry
    reps = ti_representative_bonds(geo, bond, policy.ti_cone_samples, phase=ti_phase)
    cones = [cone_of(geo, b) for b in reps]
    bra, traj = _ti_absorb(state, garr, cones, policy, update_chis, policy.ti_balance)
    return _finish(bra, bond, traj)


def _ti_absorb(ket: MeraState, garr: np.ndarray, cones, policy: UpdatePolicy,
               update_chis: bool, balance: bool):
    """Level sweep updating the shared tensors from the given cones' summed
    environments; returns the updated candidate and its trajectory."""
    geo = ket.geometry
    bra = ket.clone()
    traj = []
    d = geo.d
    ident = np.eye(d * d, dtype=garr.dtype).reshape(d, d, d, d)

    def _env_sum(ctxs, i, kind, balance):
        """Summed in-cone environments at level i; rebalanced so the pull
        keeps single-overlap weight while the gate signal is scaled to the
        whole layer (up to one common positive factor)."""
        env = ConeEngine.chi_env if kind == "chi" else ConeEngine.gamma_env
        pos = "chi_pos" if kind == "chi" else "gamma_pos"
        n_in = sum(len(getattr(cx["cone"].levels[i], pos)) for cx in ctxs)
        w = 1.0
        if balance:
            w = min(1.0, 2.0 * len(ctxs) * (1 << i) / (geo.L * n_in))
        bg = b1 = None
        for cx in ctxs:
            eng = cx["eng"]
            for t in getattr(cx["cone"].levels[i], pos):
                b = env(eng, i, cx["rho"][i - 1], cx["u"], ket, bra, t)
                bg = b if bg is None else bg + b
                if w < 1.0:
                    b = env(eng, i, cx["rho"][i - 1], cx["u1"], ket, bra, t)
                    b1 = b if b1 is None else b1 + b
        if w < 1.0:
            bg = bg + (w - 1.0) * b1
        return bg

    for _ in range(max(1, policy.level_repeats)):
        ctxs = []
        for cn in cones:
            ctxs.append({
                "eng": cn.engine,
                "cone": cn,
                "rho": _junctures(cn.engine, ket, bra, geo.ell),
                "u": garr,
                "u1": ident,
            })
        for i in range(geo.ell, 0, -1):
            f_prev = None
            for _ in range(max(1, policy.inner_sweeps)):
                if update_chis:
                    b_sum = _env_sum(ctxs, i, "chi", balance)
                    bra.set_chi(i, 1, _polar_chi(b_sum))
                    f = np.mean([
                        np.real(cx["eng"].level_fidelity(i, cx["rho"][i - 1], cx["u"], ket, bra))
                        for cx in ctxs
                    ])
                    traj.append(("chi", i, float(f)))
                if i > 1:
                    b_sum = _env_sum(ctxs, i, "gamma", balance)
                    bra.set_gamma(i, 1, _polar_gamma(b_sum))
                    f = np.mean([
                        np.real(cx["eng"].level_fidelity(i, cx["rho"][i - 1], cx["u"], ket, bra))
                        for cx in ctxs
                    ])
                    traj.append(("gamma", i, float(f)))
                else:
                    b_top = ctxs[0]["eng"].top_b(ctxs[0]["u"], ket, bra)
                    for cx in ctxs[1:]:
                        b_top = b_top + cx["eng"].top_b(cx["u"], ket, bra)
                    if balance:
                        # the top block appears once in the state, so its
                        # pull weight is 1 against L/2 gates of signal
                        w = min(1.0, 2.0 / geo.L)
                        b1 = None
                        for cx in ctxs:
                            b = cx["eng"].top_b(cx["u1"], ket, bra)
                            b1 = b if b1 is None else b1 + b
                        b_top = b_top + (w - 1.0) * b1
                    f = _top_update_ti(bra, b_top / len(ctxs))
                    traj.append(("top", 0, float(f)))
                f_now = traj[-1][2]
                if f_prev is not None and abs(f_now - f_prev) < policy.inner_tol:
                    break
                f_prev = f_now
            if i > 1:
                for cx in ctxs:
                    cx["u"] = cx["eng"].ascend_level(i, cx["u"], ket, bra)
                    if balance:
                        cx["u1"] = cx["eng"].ascend_level(i, cx["u1"], ket, bra)

    return bra, traj


def polish(state: MeraState, term, rounds: int, *, policy: UpdatePolicy | None = None,
           margin: float = 4.0, tol: float = 0.0, phase: int = 0):
    """Self-consistent energy descent for shared-tensor states.

    Gate absorption chases a moving target -- the evolved state is always a
    step ahead of the candidate -- so the shared-tensor iteration settles a
    finite distance from the energy minimum no matter how small the step.
    This closes the gap afterwards: absorb the linear gate  c - h  (``c``
    above the top of the bond term's spectrum by ``margin``) with
    environments summed over alignment classes of *both* bond parities in a
    single update.  At a fixed point the candidate equals the state, every
    copy's identity-network pull is tensor-parallel, and the polar condition
    reduces to stationarity of the class-averaged energy on the tensor
    manifold.  Both parities must enter each update: alternating them would
    demand stationarity for each parity separately, which the energy
    minimum does not satisfy.

    ``margin`` damps the steps (the h-signal rides on a ``c``-sized pull);
    ``tol`` > 0 stops early once no shared tensor moves more than ``tol``
    between rounds.  ``phase`` seeds the rotation of sampled classes.
    Returns ``(state, rounds_done)``.
    """
    if not state.ti:
        raise UpdateError("polish needs a shared-tensor state")
    policy = policy or UpdatePolicy()
    geo = state.geometry
    harr = term.tensor.array if hasattr(term, "tensor") else np.asarray(term)
    d = geo.d
    hmat = harr.reshape(d * d, d * d)
    c = float(np.linalg.eigvalsh(hmat).max()) + float(margin)
    garr = (c * np.eye(d * d) - hmat).reshape(d, d, d, d).astype(complex)

    def snapshot(st):
        arrs = [st.lam.copy()]
        for i in range(1, geo.ell + 1):
            arrs.append(st.chi(i, 1).array)
            arrs.append(st.gamma(i, 1).array)
        return arrs

    done = 0
    for r in range(rounds):
        reps = (ti_representative_bonds(geo, 1, policy.ti_cone_samples, phase=phase + r)
                + ti_representative_bonds(geo, 2, policy.ti_cone_samples, phase=phase + r))
        cones = [cone_of(geo, b) for b in reps]
        before = snapshot(state)
        state, _ = _ti_absorb(state, garr, cones, policy, policy.update_chis, False)
        done = r + 1
        if tol > 0.0:
            after = snapshot(state)
            moved = max(float(np.max(np.abs(a - b))) for a, b in zip(after, before))
            if moved < tol:
                break
    return state, done


# -- schedules and evolution ----------------------------------------------


@dataclass
class SweepReport:
    min_fidelity: float
    mean_fidelity: float
    gate_count: int


def sweep(state: MeraState, schedule: GateSchedule, *, policy: UpdatePolicy | None = None,
          update_chis: bool | None = None, ti_phase: int = 0):
    """Apply one full Trotter step (all layers of the schedule).

    Translation-invariant states absorb one representative gate per layer
    through the canonical cone; shared tensors carry the update to every
    bond of the layer at once.  ``ti_phase`` counts absorbs done so far so
    the window of sampled alignment classes keeps rotating across layers
    and steps.  Returns ``(new_state, SweepReport)``.
    """
    fids = []
    for li, layer in enumerate(schedule.layers):
        if state.ti:
            gate = layer.gates[layer.bonds.index(layer.canonical_bond)]
            state, rep = apply_gate(state, gate, layer.canonical_bond,
                                    policy=policy, update_chis=update_chis,
                                    ti_phase=ti_phase + li)
            fids.append(rep.fidelity)
        else:
            for bond, gate in zip(layer.bonds, layer.gates):
                state, rep = apply_gate(state, gate, bond,
                                        policy=policy, update_chis=update_chis)
                fids.append(rep.fidelity)
    return state, SweepReport(
        min_fidelity=min(fids), mean_fidelity=float(np.mean(fids)), gate_count=len(fids)
    )


@dataclass
class StepRecord:
    step: int
    time: float
    min_fidelity: float
    wall_seconds: float


@dataclass
class EvolveResult:
    state: MeraState
    records: list
    final_time: float
    stopped_early: bool = False


def evolve(state: MeraState, terms, dt: float, n_steps: int, *, kind: str = "euclidean",
           order: int = 2, sweep_style: str = "odd_even", policy: UpdatePolicy | None = None,
           e_shift=None, observer=None, observe_every: int = 1, stop_tol: float | None = None,
           checkpoint_path=None, start_step: int = 0, start_time: float = 0.0) -> EvolveResult:
    """Run ``n_steps`` Trotter steps of real or imaginary time evolution.

    ``observer(step, time, state)`` is called before every ``observe_every``-th
    step and once after the last; ``e_shift`` may be a number, None, or
    "auto" (track the current energy per bond so imaginary-time gates keep
    norms near one).  With ``stop_tol`` set, the run ends early once the
    energy per site drifts less than ``stop_tol`` per unit time between
    consecutive observations.  If a sweep produces a non-finite result the
    last good state is written to ``checkpoint_path`` (when given) before
    the error propagates.  ``start_step``/``start_time`` only offset the
    labels passed to the observer and records, for resumed runs.
    """
    policy = policy or UpdatePolicy()
    auto_shift = e_shift == "auto"
    shift = 0.0 if e_shift is None or auto_shift else float(e_shift)

    def build(sh):
        return trotter_schedule(terms, dt, kind=kind, order=order,
                                sweep_style=sweep_style, e_shift=sh)

    schedule = build(shift)
    records = []
    steps_done = 0
    stopped = False
    last_obs = None
    for n in range(n_steps):
        step = start_step + n
        now = start_time + n * dt
        if n % max(1, observe_every) == 0:
            e_site = None
            if auto_shift or stop_tol is not None:
                from .observables import energy  # deferred: observables imports cones

                e_site = energy(state, terms).real / state.geometry.L
            if auto_shift:
                shift = e_site
                schedule = build(shift)
            if observer is not None:
                observer(step, now, state)
            if stop_tol is not None and last_obs is not None:
                t_prev, e_prev = last_obs
                if abs(e_site - e_prev) < stop_tol * (now - t_prev):
                    stopped = True
                    break
            if e_site is not None:
                last_obs = (now, e_site)
        t0 = _time.perf_counter()
        prev = state
        try:
            state, srep = sweep(state, schedule, policy=policy,
                                update_chis=policy.update_chis and now >= policy.disentangler_start,
                                ti_phase=step * len(schedule.layers))
        except UpdateError:
            if checkpoint_path is not None:
                checkpoint_save(prev, checkpoint_path,
                                meta={"step": step, "time": now, "aborted": True})
            raise
        records.append(StepRecord(step=step, time=now + dt, min_fidelity=srep.min_fidelity,
                                  wall_seconds=_time.perf_counter() - t0))
        steps_done = n + 1
    final_time = start_time + steps_done * dt
    # on an early stop the observer already saw this exact (step, state)
    if observer is not None and not stopped:
        observer(start_step + steps_done, final_time, state)
    return EvolveResult(state=state, records=records, final_time=final_time,
                        stopped_early=stopped)
