"""Batch front end: configure runs, stream CSV logs, manage checkpoints.

Configuration is a flat ``key = value`` text file; every key can also be
given as a command-line flag, and later sources win (defaults, then preset,
then file, then flags).  All effective values are echoed as ``# key = value``
header lines of the CSV log, so a log fully documents its run.

Exit codes: 0 on completion, 1 on configuration errors, 2 on numerical
abort (a checkpoint of the last good state is written first).
"""

from __future__ import annotations

import argparse
import os
import sys
import time as _time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, checkpoint_load, checkpoint_save
from .exact import E_PER_SITE_CRITICAL, ed_ground_energy, free_fermion_energy
from .model import MODELS, ModelError
from .observables import measure
from .state import GeometryError, MeraGeometry, expand_dense, init_product, random_state, validate
from .update import UpdateError, UpdatePolicy, evolve, polish


class ConfigError(ValueError):
    """Bad configuration value, file, or command line."""


@dataclass
class RunConfig:
    """One evolution run, fully determined (with the seed) by these fields."""

    model: str = "ising"
    h: float = 1.0
    ell: int = 2
    m: int = 4
    d: int = 2
    ti: bool = False
    kind: str = "euclidean"
    trotter_order: int = 2
    sweep_style: str = "odd_even"
    dt: float = 0.1
    t_final: float = 40.0
    inner_sweeps: int = 2
    inner_tol: float = 1e-9
    level_repeats: int = 1
    disentangler_start: float = 0.0
    ti_cone_samples: int = 4
    ti_balance: bool = True
    polish_rounds: int = 0
    polish_margin: float = 4.0
    polish_tol: float = 1e-9
    stop_tol: float = 0.0
    e_shift: str = "auto"
    init: str = "product"
    seed: int = 7
    measure_every: int = 1
    out: str = "run.csv"
    checkpoint: str = ""
    checkpoint_every: int = 0
    resume: str = ""


_BOOL_WORDS = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def _to_bool(text):
    if isinstance(text, bool):
        return text
    try:
        return _BOOL_WORDS[str(text).strip().lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {text!r}") from None


def _converters():
    out = {}
    for f in fields(RunConfig):
        if f.type == "bool":
            out[f.name] = _to_bool
        elif f.type == "int":
            out[f.name] = int
        elif f.type == "float":
            out[f.name] = float
        else:
            out[f.name] = str
    return out


_CONVERT = _converters()

# Ready-made small configurations: reduced times and sizes that finish on a
# laptop while exercising the same studies as the full-scale runs.
PRESETS = {
    "ground-small": dict(ell=2, m=4, h=1.0, dt=0.1, t_final=40.0, kind="euclidean", ti=False),
    "ground-scaled": dict(ell=4, m=4, h=1.0, dt=0.1, t_final=100.0, trotter_order=2, ti=False),
    "size-study": dict(m=4, h=1.0, dt=0.1, t_final=60.0, kind="euclidean", ti=True),
    "m-study": dict(ell=4, h=1.0, dt=0.1, t_final=60.0, kind="euclidean", ti=True),
}


def parse_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment; keys must be known."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for ln, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value', got {raw.strip()!r}")
        key, val = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in _CONVERT:
            raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
        values[key] = val.strip()
    return values


def build_config(file_values=None, overrides=None, preset=None) -> RunConfig:
    """Merge defaults < preset < config file < explicit overrides."""
    merged = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    for source in (file_values or {}), (overrides or {}):
        for key, val in source.items():
            if key not in _CONVERT:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                merged[key] = _CONVERT[key](val)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {val!r} ({exc})") from exc
    cfg = RunConfig(**merged)
    _validate_config(cfg)
    return cfg


def _shift_value(cfg: RunConfig):
    text = cfg.e_shift.strip().lower()
    if text == "auto":
        return "auto"
    if text in ("", "none", "off"):
        return None
    try:
        return float(cfg.e_shift)
    except ValueError:
        raise ConfigError(f"e_shift must be 'auto', 'none' or a number, got {cfg.e_shift!r}") from None


def _validate_config(cfg: RunConfig) -> None:
    if cfg.model not in MODELS:
        raise ConfigError(f"unknown model {cfg.model!r}; have {sorted(MODELS)}")
    if cfg.t_final <= 0:
        raise ConfigError(f"t_final must be positive, got {cfg.t_final}")
    if cfg.dt <= 0:
        raise ConfigError(f"dt must be positive, got {cfg.dt}")
    if cfg.kind not in ("euclidean", "real"):
        raise ConfigError(f"kind must be 'euclidean' or 'real', got {cfg.kind!r}")
    if cfg.trotter_order not in (1, 2):
        raise ConfigError(f"trotter_order must be 1 or 2, got {cfg.trotter_order}")
    if cfg.init not in ("product", "random"):
        raise ConfigError(f"init must be 'product' or 'random', got {cfg.init!r}")
    if cfg.measure_every < 1:
        raise ConfigError(f"measure_every must be >= 1, got {cfg.measure_every}")
    if cfg.inner_sweeps < 1 or cfg.level_repeats < 1:
        raise ConfigError("inner_sweeps and level_repeats must be >= 1")
    if cfg.ti_cone_samples < 1:
        raise ConfigError(f"ti_cone_samples must be >= 1, got {cfg.ti_cone_samples}")
    if cfg.polish_rounds < 0:
        raise ConfigError(f"polish_rounds must be >= 0, got {cfg.polish_rounds}")
    if cfg.polish_rounds > 0 and not cfg.ti:
        raise ConfigError("polish_rounds needs ti mode (shared tensors)")
    if cfg.polish_tol < 0 or cfg.polish_margin <= 0:
        raise ConfigError("polish_tol must be >= 0 and polish_margin > 0")
    if cfg.stop_tol < 0:
        raise ConfigError(f"stop_tol must be >= 0, got {cfg.stop_tol}")
    _shift_value(cfg)
    try:
        MeraGeometry(ell=cfg.ell, d=cfg.d, m=cfg.m)
    except GeometryError as exc:
        raise ConfigError(str(exc)) from exc


def _outdir_path(path: str) -> str:
    """Relative output paths may be redirected with TMERA_OUTDIR."""
    base = os.environ.get("TMERA_OUTDIR", "")
    if not path or not base or os.path.isabs(path):
        return path
    os.makedirs(base, exist_ok=True)
    return os.path.join(base, path)


# -- the run subcommand ----------------------------------------------------


class _CsvLog:
    """Measurement stream with a full config echo in the header."""

    def __init__(self, path, cfg: RunConfig, terms, ff_per_site, ed_per_site):
        self.terms = terms
        self.ff = ff_per_site
        self.ed = ed_per_site
        self.t0 = _time.perf_counter()
        self.fh = open(path, "w", encoding="utf-8")
        self.fh.write(f"# version = {__version__}\n")
        for key, val in asdict(cfg).items():
            self.fh.write(f"# {key} = {val}\n")
        self.fh.write("step,tau,energy_total,energy_per_site,err_vs_ff,err_vs_ed,"
                      "sz_mean,sxsx_mean,lambda_entropy,wall_seconds\n")

    def __call__(self, step, tau, state):
        meas = measure(state, self.terms)
        err_ff = abs(meas.energy_per_site - self.ff)
        err_ed = "" if self.ed is None else f"{abs(meas.energy_per_site - self.ed):.17g}"
        wall = _time.perf_counter() - self.t0
        row = (f"{step},{tau:.17g},{meas.energy_total:.17g},{meas.energy_per_site:.17g},"
               f"{err_ff:.17g},{err_ed},{float(np.mean(meas.sz)):.17g},"
               f"{float(np.mean(meas.sxsx)):.17g},{meas.lam_entropy:.17g},{wall:.17g}\n")
        self.fh.write(row)
        self.fh.flush()

    def close(self):
        self.fh.close()


def _initial_state(cfg: RunConfig):
    geo = MeraGeometry(ell=cfg.ell, d=cfg.d, m=cfg.m)
    if cfg.resume:
        state, meta = checkpoint_load(cfg.resume, with_meta=True)
        sg = state.geometry
        if (sg.ell, sg.d, sg.m, state.ti) != (geo.ell, geo.d, geo.m, cfg.ti):
            raise ConfigError(
                f"checkpoint geometry (ell={sg.ell}, d={sg.d}, m={sg.m}, ti={state.ti}) "
                f"does not match the configuration")
        return state, int(meta.get("step", 0)), float(meta.get("time", 0.0))
    if cfg.init == "random":
        state = random_state(geo, np.random.default_rng(cfg.seed), ti=cfg.ti)
    else:
        state = init_product(geo, ti=cfg.ti)
    return state, 0, 0.0


def run(cfg: RunConfig) -> int:
    """Evolve per the config, streaming measurements to the CSV log."""
    state, start_step, start_time = _initial_state(cfg)
    L = state.geometry.L
    terms = MODELS[cfg.model](L, cfg.h)
    n_steps = int(round((cfg.t_final - start_time) / cfg.dt))
    if n_steps < 1:
        raise ConfigError(f"nothing to do: t_final={cfg.t_final} at time {start_time}")
    ff = free_fermion_energy(L, cfg.h) / L
    ed = ed_ground_energy(L, cfg.h) / L if L <= 14 else None
    policy = UpdatePolicy(inner_sweeps=cfg.inner_sweeps, inner_tol=cfg.inner_tol,
                          level_repeats=cfg.level_repeats,
                          disentangler_start=cfg.disentangler_start,
                          ti_cone_samples=cfg.ti_cone_samples,
                          ti_balance=cfg.ti_balance)
    out_path = _outdir_path(cfg.out)
    chk_path = _outdir_path(cfg.checkpoint)
    log = _CsvLog(out_path, cfg, terms, ff, ed)

    def observer(step, tau, state_now):
        log(step, tau, state_now)
        if chk_path and cfg.checkpoint_every and step > start_step \
                and (step - start_step) % cfg.checkpoint_every == 0:
            checkpoint_save(state_now, chk_path, meta={"step": step, "time": tau})

    abort_path = chk_path or out_path + ".abort.chk"
    try:
        result = evolve(state, terms, cfg.dt, n_steps, kind=cfg.kind,
                        order=cfg.trotter_order, sweep_style=cfg.sweep_style,
                        policy=policy, e_shift=_shift_value(cfg), observer=observer,
                        observe_every=cfg.measure_every,
                        stop_tol=cfg.stop_tol if cfg.stop_tol > 0 else None,
                        checkpoint_path=abort_path,
                        start_step=start_step, start_time=start_time)
    except UpdateError as exc:
        log.close()
        print(f"numerical abort: {exc}; checkpoint at {abort_path}", file=sys.stderr)
        return 2
    final_state = result.state
    final_step = start_step + len(result.records)
    if cfg.polish_rounds > 0 and final_state.ti:
        try:
            final_state, done = polish(final_state, terms[0], cfg.polish_rounds,
                                       policy=policy, margin=cfg.polish_margin,
                                       tol=cfg.polish_tol)
        except UpdateError as exc:
            log.close()
            print(f"numerical abort in polish: {exc}; checkpoint at {abort_path}",
                  file=sys.stderr)
            checkpoint_save(result.state, abort_path,
                            meta={"step": final_step, "time": result.final_time})
            return 2
        final_step += 1
        log(final_step, result.final_time, final_state)
    log.close()
    if chk_path:
        checkpoint_save(final_state, chk_path,
                        meta={"step": final_step, "time": result.final_time})
    return 0


# -- study subcommands -----------------------------------------------------


def _run_to_energy(cfg: RunConfig) -> float:
    """Execute a run, return the final per-site energy."""
    code = run(cfg)
    if code != 0:
        raise UpdateError(f"run for ell={cfg.ell}, m={cfg.m} aborted (exit {code})")
    with open(_outdir_path(cfg.out), "r", encoding="utf-8") as fh:
        last = [ln for ln in fh if ln.strip() and not ln.startswith("#")][-1]
    return float(last.split(",")[3])


def study_scaling(cfg: RunConfig, ells, out_path: str) -> int:
    """Per-site energy across system sizes at fixed m (shared-tensor mode).

    Summary columns: L, per-site energy, distance to the infinite-chain
    value, and per-site error against the finite-size reference energy.
    """
    rows = []
    stem = os.path.splitext(out_path)[0]
    for ell in ells:
        sub = RunConfig(**{**asdict(cfg), "ell": ell, "ti": True,
                           "out": f"{stem}-ell{ell}.csv", "checkpoint": "", "resume": ""})
        _validate_config(sub)
        e_site = _run_to_energy(sub)
        L = 2 ** (ell + 1)
        ff = free_fermion_energy(L, cfg.h) / L
        rows.append((L, e_site, e_site - E_PER_SITE_CRITICAL, abs(e_site - ff)))
    with open(_outdir_path(out_path), "w", encoding="utf-8") as fh:
        fh.write(f"# version = {__version__}\n# h = {cfg.h}\n# m = {cfg.m}\n"
                 f"# dt = {cfg.dt}\n# t_final = {cfg.t_final}\n")
        fh.write("L,energy_per_site,gap_to_infinite,err_vs_ff\n")
        for L, e, gap, err in rows:
            fh.write(f"{L},{e:.17g},{gap:.17g},{err:.17g}\n")
    return 0


def study_m(cfg: RunConfig, ms, out_path: str) -> int:
    """Per-site error against the finite-size reference as m grows, at fixed
    size; reports a log-linear fit of the error as a header comment."""
    rows = []
    stem = os.path.splitext(out_path)[0]
    for m in ms:
        sub = RunConfig(**{**asdict(cfg), "m": m, "out": f"{stem}-m{m}.csv",
                           "checkpoint": "", "resume": ""})
        _validate_config(sub)
        e_site = _run_to_energy(sub)
        L = 2 ** (cfg.ell + 1)
        ff = free_fermion_energy(L, cfg.h) / L
        rows.append((m, abs(e_site - ff)))
    fit_line = "# fit = n/a (needs >= 2 points with positive error)\n"
    if len(rows) >= 2 and all(err > 0 for _, err in rows):
        xs = np.array([r[0] for r in rows], dtype=float)
        ys = np.log10([r[1] for r in rows])
        coef, res = np.polyfit(xs, ys, 1), None
        pred = np.polyval(coef, xs)
        res = float(np.sqrt(np.mean((ys - pred) ** 2)))
        fit_line = (f"# fit = log10(err) ~ {coef[1]:.6g} + ({coef[0]:.6g})*m, "
                    f"rms residual = {res:.6g}\n")
    with open(_outdir_path(out_path), "w", encoding="utf-8") as fh:
        fh.write(f"# version = {__version__}\n# h = {cfg.h}\n# ell = {cfg.ell}\n"
                 f"# dt = {cfg.dt}\n# t_final = {cfg.t_final}\n")
        fh.write(fit_line)
        fh.write("m,err_vs_ff\n")
        for m, err in rows:
            fh.write(f"{m},{err:.17g}\n")
    return 0


# -- maintenance subcommands ----------------------------------------------


def validate_state(path: str) -> int:
    """Check structural invariants of a checkpointed state."""
    try:
        state = checkpoint_load(path)
    except (OSError, CheckpointError) as exc:
        print(f"cannot load {path}: {exc}", file=sys.stderr)
        return 1
    report = validate(state)
    geo = state.geometry
    print(f"geometry: ell={geo.ell}, d={geo.d}, m={geo.m}, L={geo.L}, "
          f"shared tensors: {state.ti}")
    print(f"max unitary deviation:  {report.max_unitary_dev:.3e}")
    print(f"max isometry deviation: {report.max_isometry_dev:.3e}")
    print(f"weight norm deviation:  {report.lambda_norm_dev:.3e}")
    for msg in report.messages:
        print(f"note: {msg}")
    if report.passed():
        print("state: valid")
        return 0
    print("state: INVALID", file=sys.stderr)
    return 2


def expand_state(path: str, out: str, h: float) -> int:
    """Dense dump of a small checkpointed state (L <= 12) to .npy."""
    try:
        state = checkpoint_load(path)
    except (OSError, CheckpointError) as exc:
        print(f"cannot load {path}: {exc}", file=sys.stderr)
        return 1
    L = state.geometry.L
    if L > 12:
        print(f"refusing dense expansion at L={L} (cap is 12)", file=sys.stderr)
        return 1
    psi = expand_dense(state)
    out = _outdir_path(out)
    np.save(out, psi)
    terms = MODELS["ising"](L, h)
    from .exact import dense_tfim_hamiltonian  # cheap at L <= 12

    ham = dense_tfim_hamiltonian(L, h)
    e = float(np.real(np.vdot(psi, ham @ psi)))
    print(f"wrote {out} ({psi.size} amplitudes), norm = {np.linalg.norm(psi):.12f}")
    print(f"energy per site at h={h}: {e / L:.12f}")
    if L <= 14:
        print(f"reference ground energy per site: {ed_ground_energy(L, h) / L:.12f}")
    return 0


# -- argument plumbing -----------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_config_flags(p: _Parser):
    for f in fields(RunConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None,
                       metavar="V", help=f"override {f.name} (default {f.default!r})")
    p.add_argument("--preset", default=None, choices=sorted(PRESETS),
                   help="start from a ready-made small configuration")
    p.add_argument("config", nargs="?", default=None,
                   help="optional key = value configuration file")


def _collect(args) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else None
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)
                 if getattr(args, f.name) is not None}
    return build_config(file_values=file_values, overrides=overrides, preset=args.preset)


def _int_list(text: str):
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


def main(argv=None) -> int:
    parser = _Parser(prog="tmera",
                     description="Tensor-network evolution of transverse-field Ising chains.")
    sub = parser.add_subparsers(dest="command")

    p_run = sub.add_parser("run", help="one evolution run with CSV logging")
    _add_config_flags(p_run)

    p_sc = sub.add_parser("study-scaling", help="energy across system sizes (shared tensors)")
    _add_config_flags(p_sc)
    p_sc.add_argument("--ells", default="3,4,5,6", help="levels to scan, e.g. 3,4,5,6")
    p_sc.add_argument("--summary", default="scaling.csv", help="summary CSV path")

    p_m = sub.add_parser("study-m", help="energy error as the bond cap grows")
    _add_config_flags(p_m)
    p_m.add_argument("--ms", default="2,3,4", help="bond caps to scan, e.g. 2,3,4")
    p_m.add_argument("--summary", default="mstudy.csv", help="summary CSV path")

    p_val = sub.add_parser("validate-state", help="check a checkpointed state")
    p_val.add_argument("path", help="checkpoint file")

    p_exp = sub.add_parser("expand", help="dense dump of a small checkpoint (L <= 12)")
    p_exp.add_argument("path", help="checkpoint file")
    p_exp.add_argument("--npy", default="state.npy", help="output .npy path")
    p_exp.add_argument("--h", type=float, default=1.0, help="field for the energy printout")

    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        if args.command == "run":
            return run(_collect(args))
        if args.command == "study-scaling":
            cfg = _collect(args)
            return study_scaling(cfg, _int_list(args.ells), args.summary)
        if args.command == "study-m":
            cfg = _collect(args)
            return study_m(cfg, _int_list(args.ms), args.summary)
        if args.command == "validate-state":
            return validate_state(args.path)
        if args.command == "expand":
            return expand_state(args.path, args.npy, args.h)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (ModelError, GeometryError, CheckpointError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except UpdateError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
