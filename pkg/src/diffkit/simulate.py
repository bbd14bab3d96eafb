"""Euler-Maruyama simulation with local-time accumulation and the
change-of-measure estimators.

Randomness is counter-based (Philox) and keyed by (seed, stream, step, path),
so path i depends only on (seed, i): ensembles are bit-identical for any
worker count.  Local time defaults to the discrete Tanaka update
L += |X' - y| - |X - y| - sgn(X - y)(X' - X) with sgn(0) = +1, which is an
exact identity for the discrete path; an occupation-time scheme is kept as a
cross-check.  Steps whose drift would overshoot the local geometry are halved
per path (up to a cap) before being taken.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import DiffusionSpec, ScaleSpeed, scale_speed
from .errors import PreconditionError, SimulationError
from .potentials import potential_density
from .transforms import TransformSpec, recurrent_from_atom

__all__ = [
    "SimConfig",
    "PathEnsemble",
    "euler_paths",
    "exit_survival",
    "killed_expectation",
    "naive_killed_expectation",
    "htransform_by_killing",
    "KilledSamples",
    "explosion_fraction",
    "monotone_coupling_check",
    "CouplingReport",
]

_MAIN_STREAM = 0
_SUBSTEP_STREAM = 1
_CLOCK_STREAM = 2


@dataclass(frozen=True)
class SimConfig:
    dt: float
    n_paths: int
    seed: int = 0
    local_time_scheme: str = "tanaka"  # "tanaka" | "occupation"
    bandwidth: float = 0.05  # occupation scheme half-width
    explosion_barrier: Optional[float] = None
    boundary_snap_tolerance: float = 1e-12
    threads: int = 1
    max_halvings: int = 10
    record_paths: bool = False
    flag_abort_fraction: float = 0.01
    # steps near registered levels are refined when one step's noise width
    # exceeds this window (None: a twentieth of the domain scale); refining
    # at fine dt wastes work since the discrete local time is already sharp
    atom_window: Optional[float] = None

    def __post_init__(self):
        if self.dt <= 0:
            raise PreconditionError("dt must be positive")
        if self.n_paths < 1:
            raise PreconditionError("need at least one path")
        if self.local_time_scheme not in ("tanaka", "occupation"):
            raise PreconditionError(f"unknown scheme {self.local_time_scheme!r}")
        if self.local_time_scheme == "occupation" and self.bandwidth <= 0:
            raise PreconditionError("occupation scheme needs bandwidth > 0")


@dataclass
class PathEnsemble:
    """Terminal and snapshot data for a simulated ensemble.

    Full path storage is opt-in (record_paths); big ensembles keep only the
    snapshot rows.  States freeze at the absorbing value after the lifetime.
    """

    times: np.ndarray
    states: np.ndarray  # (n_snapshots, n_paths)
    local_times: dict  # level -> (n_snapshots, n_paths)
    rate_integrals: np.ndarray  # (n_snapshots, n_paths), int c0(X) ds
    lifetimes: np.ndarray  # inf when alive at the horizon
    absorbed_at: np.ndarray  # boundary value or nan
    exploded: np.ndarray
    flagged: np.ndarray
    config: SimConfig
    levels: tuple[float, ...]
    paths: Optional[np.ndarray] = None
    path_times: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return self.states.shape[1]

    def alive(self, row: int = -1) -> np.ndarray:
        t = self.times[row]
        return ~(self.lifetimes <= t) & ~self.flagged

    def functional(self, transform: TransformSpec, row: int = -1) -> np.ndarray:
        """M_t = exp(int c0 ds + sum rate_i L^{y_i}) along each path."""
        expo = np.array(self.rate_integrals[row], copy=True)
        for level, rate in transform.local_time_charges:
            expo += rate * self.local_times[level][row]
        return np.exp(expo)

    def dump_csv(self, fname: str):
        if self.paths is None:
            raise PreconditionError("run with record_paths=True to dump paths")
        with open(fname, "w") as fh:
            lv = "".join(f",L_{level:g}" for level in self.levels)
            fh.write(f"path_id,t,x{lv}\n")
            for i in range(self.n_paths):
                for k, t in enumerate(self.path_times):
                    fh.write(f"{i},{t:.17g},{self.paths[k, i]:.17g}")
                    for level in self.levels:
                        fh.write(f",{self._path_lt[level][k, i]:.17g}")
                    fh.write("\n")


def _rng(seed: int, stream: int, a: int = 0, b: int = 0) -> np.random.Generator:
    # distinct (stream, a, b) must give independent draws: pack them into the
    # Philox key (a PRF in the key), never into the counter, which the
    # generator itself advances as values are drawn
    assert 0 <= a < (1 << 28) and 0 <= b < (1 << 28)
    key2 = (stream << 56) | (a << 28) | b
    return np.random.Generator(
        np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, key2])
    )


def _substep_noise_blocks(seed: int, step: int, gids, ncols: int) -> np.ndarray:
    """First ncols normals of each path's (seed, step, path)-keyed stream.

    State-swapping one Philox object instead of constructing one per path cuts
    the cost ~8x while producing identical streams."""
    bg = np.random.Philox(key=[0, 0])
    gen = np.random.Generator(bg)
    st = bg.state
    key1 = seed & 0xFFFFFFFFFFFFFFFF
    base = (_SUBSTEP_STREAM << 56) | (step << 28)
    out = np.empty((len(gids), ncols))
    for j, g in enumerate(gids):
        st["state"]["key"][0] = key1
        st["state"]["key"][1] = base | int(g)
        st["state"]["counter"][:] = 0
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        bg.state = st
        out[j] = gen.standard_normal(ncols)
    return out


def _resolve_model(model: Union[DiffusionSpec, TransformSpec], ss: Optional[ScaleSpeed]):
    """Extract (drift, sigma, interval, boundary modes, rate, charge levels)."""
    if isinstance(model, TransformSpec):
        spec = model.base
        drift = model.drift
        rate = model.continuous_rate
        charge_levels = tuple(level for level, _ in model.local_time_charges)
        if model.target_behavior == "recurrent":
            modes = ("reflect", "reflect")
        else:
            # transient transforms never hit an accessible boundary of the
            # base in the examples we support; reflect at finite endpoints
            # (they are inaccessible in scale), explode through barriers
            modes = ("reflect", "reflect")
        return spec, drift, spec.sigma, rate, charge_levels, modes
    spec = model
    if ss is None:
        ss = scale_speed(spec)
    modes = []
    for side in ("left", "right"):
        endpoint = spec.l if side == "left" else spec.r
        if math.isinf(endpoint):
            modes.append("none")
        else:
            acc = ss.classify_endpoint(side)["accessible"]
            modes.append("absorb" if acc != "no" else "reflect")
    return spec, spec.b, spec.sigma, None, (), tuple(modes)


def euler_paths(
    model: Union[DiffusionSpec, TransformSpec],
    x0: float,
    T: float,
    levels: Sequence[float] = (),
    cfg: SimConfig = None,
    *,
    ss: Optional[ScaleSpeed] = None,
    snapshot_times: Optional[Sequence[float]] = None,
) -> PathEnsemble:
    """Simulate an ensemble from x0 over [0, T].

    Registers local-time accumulators at `levels` plus any local-time charge
    levels of a TransformSpec; accumulates int c0(X) ds when the model carries
    a continuous rate.  Boundary crossings absorb (with linearly interpolated
    crossing times), reflect at inaccessible endpoints, or mark explosion at
    the barrier.
    """
    if cfg is None:
        raise PreconditionError("SimConfig required")
    if T <= 0:
        raise PreconditionError("horizon must be positive")
    spec, drift, sigma, rate_fn, charge_levels, modes = _resolve_model(model, ss)
    if not (spec.l < x0 < spec.r):
        raise PreconditionError(f"x0={x0} outside ({spec.l}, {spec.r})")

    all_levels = tuple(dict.fromkeys(tuple(levels) + tuple(charge_levels)))
    n_steps = max(1, int(round(T / cfg.dt)))
    dt = T / n_steps
    if snapshot_times is None:
        snapshot_times = [T]
    snap_idx = sorted({min(n_steps, max(1, int(round(t / dt)))) for t in snapshot_times})
    snap_t = np.array([k * dt for k in snap_idx])

    barrier = cfg.explosion_barrier
    if barrier is None and math.isinf(spec.r):
        barrier = 1e4 * max(abs(x0), 1.0)

    n = cfg.n_paths
    chunks = min(cfg.threads, n) if cfg.threads > 1 else 1
    bounds = np.linspace(0, n, chunks + 1, dtype=int)

    args = dict(
        spec=spec,
        drift=drift,
        sigma=sigma,
        rate_fn=rate_fn,
        levels=all_levels,
        modes=modes,
        barrier=barrier,
        x0=x0,
        dt=dt,
        n_steps=n_steps,
        snap_idx=snap_idx,
        cfg=cfg,
        n_total=n,
    )
    if chunks == 1:
        results = [_run_chunk(0, n, **args)]
    else:
        with ThreadPoolExecutor(max_workers=chunks) as ex:
            futures = [
                ex.submit(_run_chunk, int(lo), int(hi), **args)
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            results = [f.result() for f in futures]

    def cat(key):
        return np.concatenate([r[key] for r in results], axis=-1)

    flagged = cat("flagged")
    if flagged.mean() > cfg.flag_abort_fraction:
        raise SimulationError(
            f"{flagged.mean():.1%} of paths hit evaluation errors (limit "
            f"{cfg.flag_abort_fraction:.0%})"
        )
    ens = PathEnsemble(
        times=snap_t,
        states=cat("states"),
        local_times={level: cat(("lt", level)) for level in all_levels},
        rate_integrals=cat("rates"),
        lifetimes=cat("lifetimes"),
        absorbed_at=cat("absorbed_at"),
        exploded=cat("exploded"),
        flagged=flagged,
        config=cfg,
        levels=all_levels,
        paths=cat("paths") if cfg.record_paths else None,
        path_times=np.arange(n_steps + 1) * dt if cfg.record_paths else None,
    )
    if cfg.record_paths:
        ens._path_lt = {
            level: cat(("plt", level)) for level in all_levels
        }
    return ens


def _sgn(x):
    # sgn(0) = +1; copysign(1, +0.0) honors that
    return np.copysign(1.0, x)


def _run_chunk(
    lo,
    hi,
    *,
    spec,
    drift,
    sigma,
    rate_fn,
    levels,
    modes,
    barrier,
    x0,
    dt,
    n_steps,
    snap_idx,
    cfg,
    n_total,
):
    m = hi - lo
    X = np.full(m, float(x0))
    alive = np.ones(m, dtype=bool)
    flagged = np.zeros(m, dtype=bool)
    exploded = np.zeros(m, dtype=bool)
    lifetimes = np.full(m, np.inf)
    absorbed_at = np.full(m, np.nan)
    L = {level: np.zeros(m) for level in levels}
    A = np.zeros(m)

    n_snap = len(snap_idx)
    snap_states = np.empty((n_snap, m))
    snap_lt = {level: np.empty((n_snap, m)) for level in levels}
    snap_rates = np.empty((n_snap, m))
    record = cfg.record_paths
    if record:
        paths = np.empty((n_steps + 1, m))
        paths[0] = X
        plt = {level: np.zeros((n_steps + 1, m)) for level in levels}

    l_fin = math.isfinite(spec.l)
    r_fin = math.isfinite(spec.r)
    absorb_l = l_fin and modes[0] == "absorb"
    absorb_r = r_fin and modes[1] == "absorb"
    sig_const = spec.sigma_constant()
    sqrt_dt = math.sqrt(dt)
    span_scale = max(1.0, abs(x0))
    tol = cfg.boundary_snap_tolerance
    snap_pos = 0
    sig2_level = {
        level: float(np.asarray(sigma(np.asarray([level])))[0]) ** 2 for level in levels
    }
    occupation = cfg.local_time_scheme == "occupation"
    track_dt = absorb_l or absorb_r or barrier is not None or rate_fn is not None or occupation
    scale_floor = 1e-12 * span_scale

    if l_fin and r_fin:
        geom_scale = lambda Xa: np.minimum(Xa - spec.l, spec.r - Xa)
    elif l_fin:
        geom_scale = lambda Xa: np.minimum(
            Xa - spec.l, np.maximum(np.abs(Xa), span_scale)
        )
    elif r_fin:
        geom_scale = lambda Xa: np.minimum(
            spec.r - Xa, np.maximum(np.abs(Xa), span_scale)
        )
    else:
        geom_scale = lambda Xa: np.maximum(np.abs(Xa), span_scale)

    # local-time accuracy wants refined steps near the registered levels when
    # dt is coarse; the refinement bottoms out at dt/64
    span = (spec.r - spec.l) if (l_fin and r_fin) else 4.0 * span_scale
    window = cfg.atom_window if cfg.atom_window is not None else span / 20.0
    sig_ref = sig_const if sig_const is not None else (
        max(math.sqrt(v) for v in sig2_level.values()) if sig2_level else 1.0
    )
    refine_atoms = bool(levels) and 2.0 * sig_ref * sqrt_dt > window
    atom_floor = 2.0 * sig_ref * math.sqrt(dt / 64.0)
    if refine_atoms:
        lv = np.asarray(levels)

        def local_scale(Xa):
            s = geom_scale(Xa)
            for y_i in lv:
                s = np.minimum(s, np.maximum(np.abs(Xa - y_i), atom_floor))
            return s

    else:
        local_scale = geom_scale

    noise_halfwidth = None if sig_const is None else 2.0 * sig_const * sqrt_dt
    lt_cache_ok = False
    lt_abs: dict = {}
    lt_sgn: dict = {}

    for k in range(n_steps):
        t = k * dt
        Z = _rng(cfg.seed, _MAIN_STREAM, k).standard_normal(n_total)[lo:hi]
        act = alive & ~flagged
        all_active = bool(act.all())
        if act.any():
            Xa = X if all_active else X[act]
            with np.errstate(all="ignore"):
                d = np.asarray(drift(Xa), dtype=float)
                # local geometric scale: distance to finite endpoints, |x|
                # against infinite ones (guards explosive drifts)
                scale = np.maximum(local_scale(Xa), scale_floor)
                if sig_const is not None:
                    bad = ~np.isfinite(d)
                    need_sub = (np.abs(d) * dt > 0.5 * scale) | (
                        scale < noise_halfwidth
                    )
                else:
                    sg = np.asarray(sigma(Xa), dtype=float)
                    bad = ~(np.isfinite(d) & np.isfinite(sg))
                    need_sub = (np.abs(d) * dt > 0.5 * scale) | (
                        sg * sg * dt > 0.25 * scale * scale
                    )
            any_sub = bool(bad.any()) or bool(need_sub.any())
            if any_sub:
                need_sub |= bad

            noise = (
                (sig_const * sqrt_dt) * (Z if all_active else Z[act])
                if sig_const is not None
                else sg * sqrt_dt * (Z if all_active else Z[act])
            )
            Xn = Xa + d * dt + noise
            dt_eff = np.full(Xa.shape, dt) if (track_dt or any_sub) else None
            newly_dead = None
            act_ids = None

            # substep flagged paths together, in lockstep rounds
            sub_dL = None
            if any_sub:
                act_ids = np.arange(len(X)) if all_active else np.nonzero(act)[0]
                newly_dead = np.zeros(Xn.shape, dtype=bool)
                sub_j = np.nonzero(need_sub)[0]
                sub_x, sub_dt, sub_flag, sub_dead, sub_dL = _substep_batch(
                    Xa[sub_j],
                    dt,
                    drift,
                    sigma,
                    spec,
                    modes,
                    barrier,
                    cfg,
                    lo + act_ids[sub_j],
                    k,
                    span_scale,
                    local_scale,
                    scale_floor,
                    levels,
                    sig2_level,
                    occupation,
                )
                Xn[sub_j] = sub_x
                dt_eff[sub_j] = sub_dt
                flagged[act_ids[sub_j[sub_flag]]] = True
                newly_dead[sub_j] = sub_dead
                if barrier is not None:
                    subhit = sub_dead & (sub_x >= barrier)
                    exploded[act_ids[sub_j[subhit]]] = True

            # boundary handling for the vectorized paths
            if l_fin:
                if absorb_l:
                    crossed = Xn <= spec.l + tol
                    if any_sub:
                        crossed &= ~need_sub  # substeps resolved their crossing
                    if crossed.any():
                        theta = np.where(
                            crossed,
                            (spec.l - Xa) / np.where(Xn != Xa, Xn - Xa, 1.0),
                            1.0,
                        )
                        dt_eff = np.where(
                            crossed, np.clip(theta, 0.0, 1.0) * dt, dt_eff
                        )
                        Xn = np.where(crossed, spec.l, Xn)
                        if newly_dead is None:
                            newly_dead = crossed.copy()
                        else:
                            newly_dead |= crossed
                else:
                    # reflection: identity for interior points
                    Xn = np.maximum(spec.l + tol, spec.l + np.abs(Xn - spec.l))
            if r_fin:
                if absorb_r:
                    crossed = Xn >= spec.r - tol
                    if any_sub:
                        crossed &= ~need_sub
                    if crossed.any():
                        theta = np.where(
                            crossed,
                            (spec.r - Xa) / np.where(Xn != Xa, Xn - Xa, 1.0),
                            1.0,
                        )
                        dt_eff = np.where(
                            crossed, np.clip(theta, 0.0, 1.0) * dt, dt_eff
                        )
                        Xn = np.where(crossed, spec.r, Xn)
                        if newly_dead is None:
                            newly_dead = crossed.copy()
                        else:
                            newly_dead |= crossed
                else:
                    Xn = np.minimum(spec.r - tol, spec.r - np.abs(spec.r - Xn))
            if barrier is not None:
                hit = Xn >= barrier
                if any_sub:
                    hit &= ~need_sub
                if hit.any():
                    theta = np.where(
                        hit, (barrier - Xa) / np.where(Xn != Xa, Xn - Xa, 1.0), 1.0
                    )
                    dt_eff = np.where(hit, np.clip(theta, 0.0, 1.0) * dt, dt_eff)
                    Xn = np.where(hit, barrier, Xn)
                    if act_ids is None:
                        act_ids = (
                            np.arange(len(X)) if all_active else np.nonzero(act)[0]
                        )
                    exploded[act_ids[hit]] = True
                    if newly_dead is None:
                        newly_dead = hit.copy()
                    else:
                        newly_dead |= hit

            # local time and rate-integral updates over the effective step;
            # substepped paths accrued theirs round by round
            for level in levels:
                if not occupation:
                    if all_active and lt_cache_ok:
                        prev_abs = lt_abs[level]
                        prev_sgn = lt_sgn[level]
                    else:
                        prev_abs = np.abs(Xa - level)
                        prev_sgn = _sgn(Xa - level)
                    next_abs = np.abs(Xn - level)
                    dL = next_abs - prev_abs - prev_sgn * (Xn - Xa)
                    if all_active:
                        lt_abs[level] = next_abs
                        lt_sgn[level] = _sgn(Xn - level)
                else:
                    dL = (
                        sig2_level[level]
                        / (2.0 * cfg.bandwidth)
                        * dt_eff
                        * (np.abs(Xa - level) < cfg.bandwidth)
                    )
                if sub_dL is not None:
                    dL[sub_j] = sub_dL[level]
                if all_active:
                    L[level] += dL
                else:
                    L[level][act] += dL
            lt_cache_ok = all_active
            if rate_fn is not None:
                with np.errstate(all="ignore"):
                    dA = np.asarray(rate_fn(Xa), dtype=float) * dt_eff
                if all_active:
                    A += dA
                else:
                    A[act] += dA

            if all_active:
                X = Xn
            else:
                X[act] = Xn
            if newly_dead is not None and newly_dead.any():
                if act_ids is None:
                    act_ids = np.arange(len(X)) if all_active else np.nonzero(act)[0]
                dead_ids = act_ids[newly_dead]
                lifetimes[dead_ids] = t + dt_eff[newly_dead]
                alive[dead_ids] = False
                absorbed_at[dead_ids] = X[dead_ids]
            if any_sub and bad.any():
                flagged_now = act_ids[bad]
                flagged[flagged_now] = True
                lifetimes[flagged_now] = np.minimum(lifetimes[flagged_now], t)

        if record:
            paths[k + 1] = X
            for level in levels:
                plt[level][k + 1] = L[level]
        if snap_pos < n_snap and k + 1 == snap_idx[snap_pos]:
            snap_states[snap_pos] = X
            for level in levels:
                snap_lt[level][snap_pos] = L[level]
            snap_rates[snap_pos] = A
            snap_pos += 1

    out = {
        "states": snap_states,
        "rates": snap_rates,
        "lifetimes": lifetimes,
        "absorbed_at": absorbed_at,
        "exploded": exploded,
        "flagged": flagged,
    }
    for level in levels:
        out[("lt", level)] = snap_lt[level]
    if record:
        out["paths"] = paths
        for level in levels:
            out[("plt", level)] = plt[level]
    return out


def _substep_batch(
    xs,
    dt,
    drift,
    sigma,
    spec,
    modes,
    barrier,
    cfg,
    gids,
    step,
    span_scale,
    local_scale,
    scale_floor,
    levels,
    sig2_level,
    occupation,
):
    """Adaptive halving for a batch of paths over one global step.

    Paths advance in lockstep rounds; each path draws its round noise from its
    own (seed, step, path)-keyed stream, so trajectories are independent of
    which other paths happen to substep.  Registered local times accrue round
    by round (that is the point of refining near the charge levels).

    Returns (final states, time consumed, flagged, dead, dL per level)."""
    m = len(xs)
    x = np.array(xs, dtype=float)
    remaining = np.full(m, dt)
    consumed = np.zeros(m)
    flagged = np.zeros(m, dtype=bool)
    dead = np.zeros(m, dtype=bool)
    dLs = {level: np.zeros(m) for level in levels}
    # per-path noise comes in blocks from each path's own stream; one value is
    # consumed per round a path participates in, so trajectories do not depend
    # on which other paths are substepping
    _BLOCK = 64
    blocks = _substep_noise_blocks(cfg.seed, step, gids, _BLOCK)
    used = np.zeros(m, dtype=int)
    overflow_gens: dict = {}
    h_min = dt / 2**cfg.max_halvings
    l_fin = math.isfinite(spec.l)
    r_fin = math.isfinite(spec.r)
    tol = cfg.boundary_snap_tolerance
    live = np.ones(m, dtype=bool)
    for _ in range(2 ** cfg.max_halvings + 8):
        idx = np.nonzero(live & ~dead & ~flagged & (remaining > 1e-18 * dt))[0]
        if len(idx) == 0:
            break
        xi = x[idx]
        with np.errstate(all="ignore"):
            d = np.asarray(drift(xi), dtype=float)
            sg = np.asarray(sigma(xi), dtype=float)
        bad = ~(np.isfinite(d) & np.isfinite(sg))
        if bad.any():
            flagged[idx[bad]] = True
            good = ~bad
            idx, xi, d, sg = idx[good], xi[good], d[good], sg[good]
            if len(idx) == 0:
                continue
        scale = np.maximum(local_scale(xi), scale_floor)
        h = remaining[idx].copy()
        for _ in range(cfg.max_halvings):
            viol = (h > h_min) & (
                (np.abs(d) * h > 0.5 * scale) | (sg * sg * h > 0.25 * scale * scale)
            )
            if not viol.any():
                break
            h[viol] *= 0.5
        ui = used[idx]
        if ui.max() < _BLOCK:
            z = blocks[idx, ui]
        else:
            # rare ultra-deep paths continue their own streams individually
            z = np.empty(len(idx))
            inside = ui < _BLOCK
            z[inside] = blocks[idx[inside], ui[inside]]
            for pos in np.nonzero(~inside)[0]:
                j = idx[pos]
                g = overflow_gens.get(j)
                if g is None:
                    g = _rng(cfg.seed, _SUBSTEP_STREAM, step, int(gids[j]))
                    g.standard_normal(_BLOCK)  # skip the block already used
                    overflow_gens[j] = g
                z[pos] = g.standard_normal()
        used[idx] += 1
        xn = xi + d * h + sg * np.sqrt(h) * z
        theta_time = h.copy()
        if l_fin:
            crossed = xn <= spec.l + tol
            if modes[0] == "absorb":
                if crossed.any():
                    th = np.clip(
                        (spec.l - xi) / np.where(xn != xi, xn - xi, 1.0), 0.0, 1.0
                    )
                    theta_time = np.where(crossed, th * h, theta_time)
                    xn = np.where(crossed, spec.l, xn)
                    dead[idx[crossed]] = True
            else:
                xn = np.where(crossed, 2.0 * spec.l - xn, xn)
                xn = np.where(xn <= spec.l, spec.l + tol, xn)
        if r_fin:
            crossed = xn >= spec.r - tol
            if modes[1] == "absorb":
                if crossed.any():
                    th = np.clip(
                        (spec.r - xi) / np.where(xn != xi, xn - xi, 1.0), 0.0, 1.0
                    )
                    theta_time = np.where(crossed, th * h, theta_time)
                    xn = np.where(crossed, spec.r, xn)
                    dead[idx[crossed]] = True
            else:
                xn = np.where(crossed, 2.0 * spec.r - xn, xn)
                xn = np.where(xn >= spec.r, spec.r - tol, xn)
        if barrier is not None:
            hit = xn >= barrier
            if hit.any():
                th = np.clip(
                    (barrier - xi) / np.where(xn != xi, xn - xi, 1.0), 0.0, 1.0
                )
                theta_time = np.where(hit, th * h, theta_time)
                xn = np.where(hit, barrier, xn)
                dead[idx[hit]] = True
        for level in levels:
            if not occupation:
                dLs[level][idx] += (
                    np.abs(xn - level) - np.abs(xi - level) - _sgn(xi - level) * (xn - xi)
                )
            else:
                dLs[level][idx] += (
                    sig2_level[level]
                    / (2.0 * cfg.bandwidth)
                    * theta_time
                    * (np.abs(xi - level) < cfg.bandwidth)
                )
        x[idx] = xn
        consumed[idx] += theta_time
        remaining[idx] -= h
        live[idx[dead[idx]]] = False
    dt_used = np.where(dead | flagged, consumed, dt)
    return x, dt_used, flagged, dead, dLs


# ---------------------------------------------------------------------------
# Estimators


def exit_survival(
    spec: DiffusionSpec,
    ss: ScaleSpeed,
    x: float,
    y: float,
    t: float,
    cfg: SimConfig,
    *,
    transform: Optional[TransformSpec] = None,
) -> tuple[float, float]:
    """P^x(zeta > t) by simulating the never-killed recurrent transform.

    The estimator u(x,y) E[exp(-rate L^y_t) / u(X_t, y)] is exact in law; the
    returned standard error is the plain Monte-Carlo SE of the sample mean.
    """
    tr = transform if transform is not None else recurrent_from_atom(spec, ss, y)
    (level, rate), = tr.local_time_charges
    ens = euler_paths(tr, x, t, levels=(), cfg=cfg, ss=ss)
    keep = ~ens.flagged
    states = ens.states[-1][keep]
    lt = ens.local_times[level][-1][keep]
    u_xy = float(potential_density(ss, x, y))
    u_states = np.asarray(potential_density(ss, states, y), dtype=float)
    vals = u_xy * np.exp(-rate * lt) / u_states
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
    return est, se


def killed_expectation(
    spec: DiffusionSpec,
    transform: TransformSpec,
    x: float,
    T: float,
    payoff: Callable,
    cfg: SimConfig,
    *,
    ss: Optional[ScaleSpeed] = None,
) -> tuple[float, float]:
    """E^x[F(X_T) 1_{T < zeta}] = h(x) E_h[F(X_T)/(h(X_T) M_T)] via the
    never-killed transformed diffusion."""
    ens = euler_paths(transform, x, T, levels=(), cfg=cfg, ss=ss)
    keep = ~ens.flagged
    states = ens.states[-1][keep]
    M = ens.functional(transform)[keep]
    h_x = float(np.asarray(transform.h(np.asarray([x])))[0])
    h_T = np.asarray(transform.h(states), dtype=float)
    vals = h_x * np.asarray(payoff(states), dtype=float) / (h_T * M)
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
    return est, se


def naive_killed_expectation(
    spec: DiffusionSpec,
    x: float,
    T: float,
    payoff: Callable,
    cfg: SimConfig,
) -> tuple[float, float]:
    """Plain killed Euler scheme: kill when a grid point leaves (l, r).

    Kept as the baseline whose killing bias the transformed estimator beats."""
    n_steps = max(1, int(round(T / cfg.dt)))
    dt = T / n_steps
    sqrt_dt = math.sqrt(dt)
    n = cfg.n_paths
    X = np.full(n, float(x))
    alive = np.ones(n, dtype=bool)
    for k in range(n_steps):
        Z = _rng(cfg.seed, _MAIN_STREAM, k).standard_normal(n)
        with np.errstate(all="ignore"):
            d = np.asarray(spec.b(X), dtype=float)
            sg = np.asarray(spec.sigma(X), dtype=float)
        X = np.where(alive, X + d * dt + sg * sqrt_dt * Z, X)
        alive &= (X > spec.l) & (X < spec.r)
    vals = np.where(alive, np.asarray(payoff(X), dtype=float), 0.0)
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(n))
    return est, se


@dataclass
class KilledSamples:
    """Exponential-clock killing of a recurrent transform: the survivors at T
    sample the Doob h-transform."""

    survived: np.ndarray
    states: np.ndarray
    local_times: np.ndarray
    rate: float
    clocks: np.ndarray

    @property
    def survival_fraction(self) -> float:
        return float(np.mean(self.survived))


def htransform_by_killing(
    transform: TransformSpec, x: float, T: float, cfg: SimConfig, *, ss=None
) -> KilledSamples:
    """Kill the recurrent transform when rate * L^y exceeds an independent unit
    exponential clock; survivors at T are h-transform samples."""
    if len(transform.local_time_charges) != 1:
        raise PreconditionError("exponential-clock killing needs a single charge")
    (level, rate), = transform.local_time_charges
    if rate < 0:
        raise PreconditionError("killing requires a nonnegative charge rate")
    ens = euler_paths(transform, x, T, levels=(), cfg=cfg, ss=ss)
    clocks = _rng(cfg.seed, _CLOCK_STREAM, 0).standard_exponential(cfg.n_paths)
    lt = ens.local_times[level][-1]
    survived = rate * lt < clocks
    return KilledSamples(
        survived=survived,
        states=ens.states[-1],
        local_times=lt,
        rate=rate,
        clocks=clocks,
    )


def explosion_fraction(
    transform: TransformSpec, x: float, T: float, cfg: SimConfig, *, ss=None
) -> tuple[float, float]:
    """Fraction of paths reaching the explosion barrier by T (proxy for
    explosion), with its binomial standard error."""
    ens = euler_paths(transform, x, T, levels=(), cfg=cfg, ss=ss)
    p = float(np.mean(ens.exploded))
    se = math.sqrt(max(p * (1.0 - p), 1e-12) / ens.n_paths)
    return p, se


@dataclass
class CouplingReport:
    pointwise_violation_fraction: float
    terminal_ordered_fraction: float
    n_paths: int
    n_steps: int


def monotone_coupling_check(
    spec: DiffusionSpec,
    ss: ScaleSpeed,
    x: float,
    y0: float,
    y1: float,
    T: float,
    cfg: SimConfig,
) -> CouplingReport:
    """Drive the atom transforms at levels y0 <= y1 with shared Gaussian
    increments and report how often the discretization breaks the ordering
    X^{y0} <= X^{y1} (no substepping: both processes must see identical noise).
    """
    if y0 > y1:
        raise PreconditionError("need y0 <= y1")
    tr0 = recurrent_from_atom(spec, ss, y0)
    tr1 = recurrent_from_atom(spec, ss, y1)
    n_steps = max(1, int(round(T / cfg.dt)))
    dt = T / n_steps
    sqrt_dt = math.sqrt(dt)
    n = cfg.n_paths
    X0 = np.full(n, float(x))
    X1 = np.full(n, float(x))
    tol = 1e-9 * max(1.0, abs(x))
    viol = 0
    floor = spec.l + 1e-12 * max(1.0, abs(x))
    for k in range(n_steps):
        Z = _rng(cfg.seed, _MAIN_STREAM, k).standard_normal(n)
        with np.errstate(all="ignore"):
            X0 = X0 + np.asarray(tr0.drift(X0), dtype=float) * dt + np.asarray(
                spec.sigma(X0), dtype=float
            ) * sqrt_dt * Z
            X1 = X1 + np.asarray(tr1.drift(X1), dtype=float) * dt + np.asarray(
                spec.sigma(X1), dtype=float
            ) * sqrt_dt * Z
        if math.isfinite(spec.l):
            X0 = np.maximum(X0, floor)
            X1 = np.maximum(X1, floor)
        viol += int(np.count_nonzero(X0 > X1 + tol))
    ordered = float(np.mean(X0 <= X1 + tol))
    return CouplingReport(
        pointwise_violation_fraction=viol / (n * n_steps),
        terminal_ordered_fraction=ordered,
        n_paths=n,
        n_steps=n_steps,
    )
