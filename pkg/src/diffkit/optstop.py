"""Perpetual optimal stopping sup_tau E^x[e^{-lambda tau} g(X_tau)] for
regular diffusions, solved through the composed transform and the smallest
concave majorant.

After reducing to natural scale, the discounting is absorbed by the
positive-recurrent transform at the anchor y and the local-time factor by the
transient conditioning, leaving an undiscounted stopping problem for a
diffusion with scale s_tilde mapping onto (0, 1).  There the value function is
the smallest concave majorant G of the rescaled payoff g/Phi, with Phi(x) =
u_lambda(x, y)(1 + c |s_h(x)|), c = u_lambda(y, y)/2.  The value function is
finite exactly when g/[u_lambda(., y)(1 + |s_h|)] stays bounded toward both
endpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import DiffusionSpec, ScaleSpeed, scale_speed
from .errors import PreconditionError
from .potentials import FundamentalPair, fundamental_solutions
from .transforms import TransformSpec, composed_os_transform

__all__ = [
    "StoppingProblem",
    "StoppingSolution",
    "NaturalScaleReduction",
    "to_natural_scale",
    "check_finiteness",
    "FinitenessReport",
    "concave_majorant",
    "PiecewiseLinearMajorant",
    "solve",
]


# ---------------------------------------------------------------------------
# natural-scale reduction


class _InverseScale:
    """Interpolants of s^{-1}(z) and sigma_Y(z) = (s' sigma)(s^{-1}(z)), built
    from the scale's value grid and extended lazily when queries approach the
    image endpoints (the x-range grows exponentially in that regime)."""

    def __init__(self, ss: ScaleSpeed, sigma: Callable):
        self.ss = ss
        self.sigma = sigma
        ss._ensure_cover(ss.anchor, ss.anchor)  # force grid construction
        self._build()

    def _build(self):
        ss = self.ss
        nodes = ss._grid[0].x
        z_vals = ss.s_vec(nodes)
        sp = ss.s_prime_vec(nodes)
        with np.errstate(all="ignore"):
            sig_y = sp * np.asarray(self.sigma(nodes), dtype=float)
        good = (
            np.isfinite(z_vals)
            & np.isfinite(sp)
            & np.isfinite(sig_y)
            & (sp > 0)
            & (sig_y > 0)
        )
        nodes, z_vals, sp, sig_y = nodes[good], z_vals[good], sp[good], sig_y[good]
        keep = np.concatenate([[True], np.diff(z_vals) > 0])
        from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

        self._inv = CubicHermiteSpline(z_vals[keep], nodes[keep], 1.0 / sp[keep])
        self._sig = PchipInterpolator(z_vals[keep], sig_y[keep])
        self.z_lo = float(z_vals[keep][0])
        self.z_hi = float(z_vals[keep][-1])
        self.x_lo = float(nodes[keep][0])
        self.x_hi = float(nodes[keep][-1])

    def ensure(self, z_lo: float, z_hi: float):
        """Extend the underlying scale grid until [z_lo, z_hi] is covered (or
        the grid caps out; queries then clamp)."""
        for _ in range(8):
            need_l = z_lo < self.z_lo and math.isfinite(z_lo)
            need_r = z_hi > self.z_hi and math.isfinite(z_hi)
            if not (need_l or need_r):
                return
            grew = False
            ss = self.ss
            lo_req = self.x_lo if not need_l else self._stretch(self.x_lo, ss.spec.l)
            hi_req = self.x_hi if not need_r else self._stretch(self.x_hi, ss.spec.r)
            old = (self.x_lo, self.x_hi)
            ss._ensure_cover(lo_req, hi_req)
            self._build()
            if (self.x_lo, self.x_hi) == old:
                return  # capped
        return

    @staticmethod
    def _stretch(x: float, endpoint: float) -> float:
        if math.isfinite(endpoint):
            return endpoint + (x - endpoint) / 1e3
        return x * 1e3 if abs(x) > 1.0 else (1e3 if endpoint > 0 else -1e3)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = self._inv(np.clip(z, self.z_lo, self.z_hi))
        return out if out.shape else float(out)

    def sigma_of_z(self, z):
        z = np.asarray(z, dtype=float)
        out = self._sig(np.clip(z, self.z_lo, self.z_hi))
        return out if out.shape else float(out)


@dataclass
class NaturalScaleReduction:
    """Y = s(X) coordinates with the inverse map kept for reporting."""

    base_spec: DiffusionSpec
    base_ss: ScaleSpeed
    spec: DiffusionSpec  # natural-scale Y spec
    identity: bool
    inverse: Optional[_InverseScale] = None

    def z_of_x(self, x):
        if self.identity:
            return np.asarray(x, dtype=float)
        return self.base_ss.s_vec(x)

    def x_of_z(self, z):
        if self.identity:
            return np.asarray(z, dtype=float)
        return self.inverse(z)


def to_natural_scale(spec: DiffusionSpec, ss: ScaleSpeed, payoff: Callable):
    """Reduce to Y = s(X): sigma_Y(z) = (s' sigma)(s^{-1}(z)), payoff g(s^{-1})."""
    if spec.drift_is_zero():
        red = NaturalScaleReduction(spec, ss, spec, identity=True)
        return red, payoff

    l_y = ss.left_limit.value if ss.left_limit.finite else -math.inf
    r_y = ss.right_limit.value if ss.right_limit.finite else math.inf
    inverse = _InverseScale(ss, spec.sigma)
    # the eigenvalue shooting truncates geometrically close to the image
    # endpoints; pre-extend the maps deep enough for those queries
    margin_l = l_y + 1e-7 * (ss.anchor - l_y) if math.isfinite(l_y) else -math.inf
    margin_r = r_y - 1e-7 * (r_y - ss.anchor) if math.isfinite(r_y) else math.inf
    inverse.ensure(margin_l, margin_r)

    spec_y = DiffusionSpec(
        sigma=inverse.sigma_of_z,
        b=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
        l=l_y,
        r=r_y,
        label=f"natural({spec.label})",
    )
    red = NaturalScaleReduction(spec, ss, spec_y, identity=False, inverse=inverse)

    def payoff_y(z):
        z = np.asarray(z, dtype=float)
        x = np.asarray(inverse(z))
        out = np.asarray(payoff(x), dtype=float)
        return out if out.shape else float(out)

    return red, payoff_y


# ---------------------------------------------------------------------------
# finiteness of the value function


@dataclass
class FinitenessReport:
    verdict: str  # "finite" | "infinite" | "inconclusive"
    witness_endpoint: Optional[str] = None
    witness_sequence: tuple = ()

    @property
    def finite(self) -> bool:
        return self.verdict == "finite"


def _ratio_verdict(ratios: np.ndarray) -> str:
    """Bounded / diverging / undecided for a sequence along an approach path."""
    good = np.isfinite(ratios)
    if not good.all():
        # overflow on the way to the endpoint counts as divergence if the
        # finite prefix was already growing
        pre = ratios[good]
        if len(pre) >= 2 and pre[-1] > 1.5 * max(pre[0], 1e-300):
            return "infinite"
        if (~good).any():
            return "infinite" if len(pre) == 0 or pre[-1] > 0 else "inconclusive"
    growth_run = 0
    for a, b in zip(ratios[:-1], ratios[1:]):
        if b >= 1.5 * max(a, 1e-300) and b > 1e-12:
            growth_run += 1
            if growth_run >= 6:
                return "infinite"
        else:
            growth_run = 0
    tail = ratios[-4:]
    if np.all(np.diff(tail) <= 1e-12 + 1e-6 * np.abs(tail[:-1])):
        return "finite"
    if ratios[-1] <= max(np.max(ratios[:-3]), 1e-300):
        return "finite"
    return "inconclusive"


def check_finiteness(
    payoff: Callable, fp: FundamentalPair, transform: TransformSpec, *, n_points: int = 16
) -> FinitenessReport:
    """Evaluate z -> g(z)/[u_lambda(z, y)(1 + |s_h(z)|)] along geometric
    approach sequences to both endpoints; bounded means a finite value."""
    y = transform.extras["atom"]
    s_h = transform.s_h
    spec = transform.base

    def ratio(zs):
        zs = np.asarray(zs, dtype=float)
        g = np.asarray(payoff(zs), dtype=float)
        u = fp.u(zs, y)
        sh = np.array([s_h(z) for z in np.atleast_1d(zs)])
        with np.errstate(all="ignore"):
            return g / (u * (1.0 + np.abs(sh)))

    verdicts = {}
    for side, endpoint in (("left", spec.l), ("right", spec.r)):
        if math.isfinite(endpoint):
            d0 = abs(y - endpoint)
            ds = d0 * 10.0 ** (-np.arange(1, n_points + 1) * 0.75)
            zs = endpoint + np.sign(y - endpoint) * ds
        else:
            cover = abs((fp.x_hi if endpoint > y else fp.x_lo) - y)
            d0 = max(1.0, abs(y))
            ds = np.geomspace(d0, 0.95 * cover, n_points)
            zs = y + np.sign(endpoint) * ds
        with np.errstate(all="ignore"):
            r = ratio(zs)
        verdicts[side] = (_ratio_verdict(np.asarray(r)), tuple(np.asarray(r)))

    for side in ("left", "right"):
        if verdicts[side][0] == "infinite":
            return FinitenessReport("infinite", side, verdicts[side][1])
    if all(v[0] == "finite" for v in verdicts.values()):
        return FinitenessReport("finite")
    side = next(s for s, v in verdicts.items() if v[0] != "finite")
    return FinitenessReport("inconclusive", side, verdicts[side][1])


# ---------------------------------------------------------------------------
# smallest concave majorant


@dataclass
class PiecewiseLinearMajorant:
    knots_z: np.ndarray
    knots_v: np.ndarray

    def __call__(self, z):
        return np.interp(np.asarray(z, dtype=float), self.knots_z, self.knots_v)


def concave_majorant(
    zs,
    vals,
    left_limit: float,
    right_limit: float,
    *,
    z_left: Optional[float] = None,
    z_right: Optional[float] = None,
) -> PiecewiseLinearMajorant:
    """Upper concave envelope (monotone-chain upper hull) of the points plus
    the two boundary points (placed at z_left/z_right when given, else just
    outside the data)."""
    zs = np.asarray(zs, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if len(zs) < 2:
        raise PreconditionError("need at least two points for a majorant")
    if np.any(np.diff(zs) <= 0):
        raise PreconditionError("z values must be strictly increasing")
    span = zs[-1] - zs[0]
    zl = z_left if z_left is not None else zs[0] - 1e-12 * span
    zr = z_right if z_right is not None else zs[-1] + 1e-12 * span
    if not (zl < zs[0] and zr > zs[-1]):
        raise PreconditionError("boundary anchors must bracket the data")
    pts_z = np.concatenate([[zl], zs, [zr]])
    pts_v = np.concatenate([[left_limit], vals, [right_limit]])
    hull_z: list[float] = []
    hull_v: list[float] = []
    for z, v in zip(pts_z, pts_v):
        while len(hull_z) >= 2:
            oz, ov = hull_z[-2], hull_v[-2]
            az, av = hull_z[-1], hull_v[-1]
            # pop the middle point when it lies on or below the chord
            if (az - oz) * (v - ov) - (av - ov) * (z - oz) >= 0.0:
                hull_z.pop()
                hull_v.pop()
            else:
                break
        hull_z.append(float(z))
        hull_v.append(float(v))
    return PiecewiseLinearMajorant(np.asarray(hull_z), np.asarray(hull_v))


# ---------------------------------------------------------------------------
# the solver


@dataclass
class StoppingProblem:
    spec: DiffusionSpec
    payoff: Callable
    lamb: float
    spot: float
    anchor: Optional[float] = None  # defaults to the spot
    n_grid: int = 4001

    def __post_init__(self):
        if self.lamb <= 0:
            raise PreconditionError("discount rate must be positive")
        if not (self.spec.l < self.spot < self.spec.r):
            raise PreconditionError("spot outside the state interval")
        if self.anchor is None:
            self.anchor = self.spot
        probes = np.linspace(0.0, 1.0, 9)[1:-1]
        from .core import probe_points

        xs = probe_points(self.spec.l, self.spec.r, 9)
        g = np.asarray(self.payoff(xs), dtype=float)
        if np.any(g < -1e-12) or not np.all(np.isfinite(g)):
            raise PreconditionError("payoff must be nonnegative and finite")


@dataclass
class StoppingSolution:
    finiteness: FinitenessReport
    lamb: float
    anchor: float
    x_grid: Optional[np.ndarray] = None
    z_grid: Optional[np.ndarray] = None
    g_hat: Optional[np.ndarray] = None
    majorant: Optional[PiecewiseLinearMajorant] = None
    in_region: Optional[np.ndarray] = None
    stopping_region: tuple = ()
    value: Optional[Callable] = None
    value_at_spot: Optional[float] = None
    boundary_flags: dict = field(default_factory=dict)
    reduction: Optional[NaturalScaleReduction] = None
    transform: Optional[TransformSpec] = None

    def to_csv(self, fname: str, *, s_tilde=None):
        with open(fname, "w") as fh:
            fh.write("x,s_tilde,g_hat,G,V,in_region\n")
            for i, x in enumerate(self.x_grid):
                z = self.z_grid[i]
                fh.write(
                    f"{x:.17g},{z:.17g},{self.g_hat[i]:.17g},"
                    f"{float(self.majorant(z)):.17g},"
                    f"{float(self.value(np.asarray(x))):.17g},"
                    f"{int(self.in_region[i])}\n"
                )


def _boundary_ghat(
    payoff_y, tr, spec_y, ss_y, side: str, edge_x: float, cover_lo: float, cover_hi: float
):
    """Boundary value of g/Phi along a geometric approach sequence (kept
    within the transform's numerically covered range).

    Accessible endpoints get the Richardson-style limit of the full ratio;
    inaccessible ones the limsup over the last points of the approach, with a
    low-confidence flag when the tail has not settled to 1%."""
    endpoint = spec_y.l if side == "left" else spec_y.r
    weight = tr.weight
    accessible = (
        math.isfinite(endpoint)
        and ss_y.classify_endpoint(side)["accessible"] == "yes"
    )
    y = tr.extras["atom"]
    cap = cover_hi if side == "right" else cover_lo
    if math.isfinite(endpoint):
        d_min = abs(cap - endpoint) * 1.02 if math.isfinite(cap) else 0.0
        d0 = abs(edge_x - endpoint)
        ds = np.maximum(d0 * 4.0 ** (-np.arange(0, 12)), max(d_min, 1e-300))
        zs = endpoint + np.sign(y - endpoint) * ds
    else:
        d0 = min(abs(edge_x - y), 0.49 * abs(cap - y))
        d_max = 0.98 * abs(cap - y)
        ds = np.geomspace(max(d0, 1e-8), max(d_max, 2 * d0), 12)
        zs = y + np.sign(endpoint) * ds
    with np.errstate(all="ignore"):
        r = np.asarray(payoff_y(zs), dtype=float) / np.asarray(weight(zs), dtype=float)
    r = r[np.isfinite(r)]
    if len(r) == 0:
        return 0.0, {"accessible": accessible, "low_confidence": True}
    if accessible:
        if len(r) >= 3:
            d1 = r[-1] - r[-2]
            d2 = r[-1] - 2.0 * r[-2] + r[-3]
            val = r[-1] - (d1 * d1 / d2 if d2 != 0 else 0.0)
        else:
            val = r[-1]
        return max(val, 0.0), {"accessible": True, "low_confidence": False}
    tail = r[-5:]
    if np.all(np.diff(tail) <= 0):
        # monotone decay: the limsup is the limit; geometric shrinking means 0
        ratios = tail[1:] / np.maximum(tail[:-1], 1e-300)
        val = 0.0 if np.all(ratios <= 0.9) else float(tail[-1])
        spread = 0.0
    else:
        val = float(np.max(tail))
        spread = (np.max(tail) - np.min(tail)) / max(np.max(np.abs(tail)), 1e-300)
    return max(val, 0.0), {"accessible": False, "low_confidence": bool(spread > 0.01)}


def solve(problem: StoppingProblem) -> StoppingSolution:
    """Build the composed transform, pull the payoff to the (0, 1) scale axis,
    take the smallest concave majorant, and pull back V = Phi * G(s_tilde)."""
    spec = problem.spec
    ss = scale_speed(spec)
    red, payoff_y = to_natural_scale(spec, ss, problem.payoff)
    spec_y = red.spec
    ss_y = ss if red.identity else scale_speed(spec_y)
    y = float(red.z_of_x(np.asarray(problem.anchor)))
    spot_y = float(red.z_of_x(np.asarray(problem.spot)))

    fp = fundamental_solutions(spec_y, ss_y, problem.lamb)
    tr = composed_os_transform(spec_y, ss_y, fp, y)

    fin = check_finiteness(payoff_y, fp, tr)
    if fin.verdict == "infinite":
        return StoppingSolution(
            finiteness=fin, lamb=problem.lamb, anchor=problem.anchor
        )

    # grid uniform in the z = s_tilde coordinate on the bulk, with geometric
    # tails toward z = 0 and z = 1 (s_tilde compresses the far field
    # exponentially, and the majorant has boundary curvature there)
    n = problem.n_grid
    sh_lo, sh_hi = tr.s_h.coverage()
    cover_lo = max(spec_y.l, fp.x_lo, sh_lo)
    cover_hi = min(spec_y.r, fp.x_hi, sh_hi)
    coarse = _coarse_nodes(spec_y, y, cover_lo, cover_hi)
    z_coarse = np.asarray(tr.s_tilde(coarse))
    keep = np.concatenate([[True], np.diff(z_coarse) > 1e-15])
    coarse, z_coarse = coarse[keep], z_coarse[keep]
    delta = 0.5 / n
    pieces = [np.linspace(max(z_coarse[0], delta), min(z_coarse[-1], 1.0 - delta), n)]
    if z_coarse[0] < delta:
        pieces.append(np.geomspace(max(z_coarse[0], 1e-300), delta, 200))
    if z_coarse[-1] > 1.0 - delta:
        pieces.append(1.0 - np.geomspace(max(1.0 - z_coarse[-1], 1e-300), delta, 200))
    z_targets = np.unique(np.concatenate(pieces))
    x_grid = np.interp(z_targets, z_coarse, coarse)
    x_grid = np.unique(np.concatenate([x_grid, [y, spot_y]]))
    z_grid = np.asarray(tr.s_tilde(x_grid))
    good = np.concatenate([[True], np.diff(z_grid) > 0])
    x_grid, z_grid = x_grid[good], z_grid[good]

    with np.errstate(all="ignore"):
        g_vals = np.asarray(payoff_y(x_grid), dtype=float)
        phi_vals = np.asarray(tr.weight(x_grid), dtype=float)
        g_hat = g_vals / phi_vals
    ok = np.isfinite(g_hat)
    x_grid, z_grid, g_hat = x_grid[ok], z_grid[ok], g_hat[ok]

    flags = {}
    left_val, flags["left"] = _boundary_ghat(
        payoff_y, tr, spec_y, ss_y, "left", float(x_grid[0]), cover_lo, cover_hi
    )
    right_val, flags["right"] = _boundary_ghat(
        payoff_y, tr, spec_y, ss_y, "right", float(x_grid[-1]), cover_lo, cover_hi
    )

    G = concave_majorant(z_grid, g_hat, left_val, right_val, z_left=0.0, z_right=1.0)
    g_max = max(float(np.max(G.knots_v)), 1e-300)
    tol = 1e-9 * g_max
    g_on_grid = G(z_grid)
    # ties included; where the payoff exactly vanishes, membership requires
    # the majorant to vanish too, else stopping forfeits V > 0
    meets = g_hat >= g_on_grid - tol
    positive = g_hat > 0.0
    in_region = np.where(positive, meets, g_on_grid <= 0.0)

    # closed stopping intervals, reported in original coordinates
    intervals = []
    i = 0
    m = len(x_grid)
    while i < m:
        if in_region[i]:
            j = i
            while j + 1 < m and in_region[j + 1]:
                j += 1
            lo = spec.l if i == 0 else float(red.x_of_z(x_grid[i]))
            hi = spec.r if j == m - 1 else float(red.x_of_z(x_grid[j]))
            intervals.append((lo, hi))
            i = j + 1
        else:
            i += 1

    def value(x):
        xy = red.z_of_x(np.asarray(x, dtype=float))
        out = np.asarray(tr.weight(xy), dtype=float) * G(np.asarray(tr.s_tilde(xy)))
        return out if out.shape else float(out)

    x_orig = red.x_of_z(x_grid) if not red.identity else x_grid
    return StoppingSolution(
        finiteness=fin,
        lamb=problem.lamb,
        anchor=problem.anchor,
        x_grid=np.asarray(x_orig),
        z_grid=z_grid,
        g_hat=g_hat,
        majorant=G,
        in_region=in_region,
        stopping_region=tuple(intervals),
        value=value,
        value_at_spot=float(value(np.asarray(problem.spot))),
        boundary_flags=flags,
        reduction=red,
        transform=tr,
    )


def _coarse_nodes(spec_y, y, lo, hi, per_decade: int = 24):
    scale = max(1.0, abs(y))

    def side(end):
        d_total = abs(end - y)
        if d_total <= 0:
            return np.array([])
        d_min = min(1e-8 * scale, d_total / 8.0)
        n = max(12, int(per_decade * math.log10(d_total / d_min)))
        return y + np.sign(end - y) * np.geomspace(d_min, d_total * (1 - 1e-12), n)

    return np.unique(np.concatenate([side(lo), [y], side(hi)]))
