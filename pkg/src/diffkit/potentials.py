"""Potential kernels of a regular diffusion.

The zero-potential u(x, y) of a transient diffusion comes straight from the
normalized scale function.  The alpha-potential comes from the increasing and
decreasing solutions of the eigenvalue problem ``(1/2) sigma^2 f'' + b f' =
alpha f``, integrated as the first-order system df = g ds, dg = alpha f dm
(which absorbs non-smooth s'), shooting from truncated endpoints with boundary
conditions chosen by endpoint class.  Both solutions grow or decay
exponentially, so states are renormalized on the fly and stored as log values
with exact derivative data for interpolation.

All kernels are normalized against the speed measure m(dx) = 2 dx/(s' sigma^2):
u_a(x, y) = psi(x ^ y) phi(x v y) / w with w = (psi' phi - psi phi')/s'.  With
this normalization the resolvent identity integral u_a(x, y) m(dy) <= 1/alpha
holds with equality for conservative diffusions, the jump of the left
x-derivative of u_a(., y) at y equals -s'(y), and the local-time charge rates
s'(y)/(2 u(y, y)) make h(X) M a martingale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import BPoly

from .core import CumulativeIntegral, DiffusionSpec, ScaleSpeed, domain_anchor
from .errors import (
    InconclusiveError,
    PreconditionError,
    RecurrentDiffusionError,
    SolverError,
)

__all__ = [
    "FundamentalPair",
    "PotentialKernel",
    "potential_density",
    "potential_log_derivative",
    "fundamental_solutions",
    "alpha_potential",
    "hitting_laplace",
    "local_time_total_law",
    "two_sided_exit_discount",
]


# ---------------------------------------------------------------------------
# Zero-potential (transient diffusions only)


def _scale_case(ss: ScaleSpeed) -> str:
    lf = ss.left_limit
    rf = ss.right_limit
    if lf.verdict == "inconclusive" or rf.verdict == "inconclusive":
        raise InconclusiveError(
            "scale limits inconclusive; cannot select potential-density case"
        )
    if lf.finite and rf.finite:
        return "both"
    if lf.finite:
        return "left"
    if rf.finite:
        return "right"
    raise RecurrentDiffusionError(
        "potential density requested for a recurrent diffusion"
    )


def potential_density(ss: ScaleSpeed, x, y):
    """u(x, y) for a transient diffusion, from the normalized scale function."""
    case = _scale_case(ss)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a = np.minimum(x, y)
    b = np.maximum(x, y)
    if case == "both":
        out = ss.s_vec(a) * (1.0 - ss.s_vec(b))
    elif case == "left":
        out = ss.s_vec(a)
    else:
        out = 1.0 - ss.s_vec(b)
    return out if out.shape else float(out)


def potential_log_derivative(ss: ScaleSpeed, x, y):
    """Left x-derivative ratio u_x(x, y)/u(x, y); the atom x = y takes the
    left branch (matching the indicator 1_{x <= y} in the drift formulas)."""
    case = _scale_case(ss)
    x = np.asarray(x, dtype=float)
    sv, sp = ss.s_and_prime_vec(x)
    left_branch = x <= y
    if case == "both":
        out = np.where(left_branch, sp / sv, -sp / (1.0 - sv))
    elif case == "left":
        out = np.where(left_branch, sp / sv, 0.0)
    else:
        out = np.where(left_branch, 0.0, -sp / (1.0 - sv))
    return out if out.shape else float(out)


def local_time_total_law(ss: ScaleSpeed, y: float) -> float:
    """Exponential rate of the total local time at y: s'(y) / (2 u(y, y))."""
    u_yy = potential_density(ss, y, y)
    return ss.s_prime(y) / (2.0 * u_yy)


# ---------------------------------------------------------------------------
# Fundamental solutions of the alpha eigenvalue problem


@dataclass
class FundamentalPair:
    """Increasing (psi) and decreasing (phi) solutions with their Wronskian.

    Immutable after construction: values live on an eager log-space grid with
    exact derivative data; safe for concurrent reads.
    """

    alpha: float
    anchor: float
    x_lo: float
    x_hi: float
    wronskian: float
    ss: ScaleSpeed = field(repr=False)
    _logpsi: BPoly = field(repr=False, default=None)
    _logphi: BPoly = field(repr=False, default=None)
    _dlogpsi: Callable = field(repr=False, default=None)
    _dlogphi: Callable = field(repr=False, default=None)
    diagnostics: dict = field(default_factory=dict)

    def _clip(self, x):
        return np.clip(np.asarray(x, dtype=float), self.x_lo, self.x_hi)

    def psi(self, x):
        return np.exp(self._logpsi(self._clip(x)))

    def phi(self, x):
        return np.exp(self._logphi(self._clip(x)))

    def log_psi(self, x):
        return self._logpsi(self._clip(x))

    def log_phi(self, x):
        return self._logphi(self._clip(x))

    def ratio_increasing(self, x):
        """d log psi / dx."""
        return self._dlogpsi(self._clip(x))

    def ratio_decreasing(self, x):
        """d log phi / dx (negative)."""
        return self._dlogphi(self._clip(x))

    def u(self, x, y):
        """Symmetric alpha-potential density u_a(x, y) = psi(x^y) phi(xvy)/w."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        a = np.minimum(x, y)
        b = np.maximum(x, y)
        out = np.exp(self.log_psi(a) + self.log_phi(b) - math.log(self.wronskian))
        return out if out.shape else float(out)

    def u_x(self, x, y):
        """Left partial x-derivative of u_a(., y); the atom takes the psi branch."""
        x = np.asarray(x, dtype=float)
        r = np.where(x <= y, self.ratio_increasing(x), self.ratio_decreasing(x))
        out = self.u(x, y) * r
        return out if out.shape else float(out)

    def log_derivative(self, x, y, *, atom_side: str = "left"):
        """u_x/u with a selectable branch at the atom x = y.

        atom_side="right" reproduces the sgn(0) = +1 drift convention of the
        positive-recurrent transform.
        """
        x = np.asarray(x, dtype=float)
        if atom_side == "left":
            mask = x <= y
        else:
            mask = x < y
        out = np.where(mask, self.ratio_increasing(x), self.ratio_decreasing(x))
        return out if out.shape else float(out)


def _trunc_initial(endpoint: float, anchor: float) -> float:
    if math.isfinite(endpoint):
        return endpoint + (anchor - endpoint) * 1e-2
    sign = 1.0 if endpoint > anchor else -1.0
    return anchor + sign * 8.0 * max(1.0, abs(anchor))


def _trunc_push(trunc: float, endpoint: float, anchor: float) -> float:
    if math.isfinite(endpoint):
        nxt = endpoint + (trunc - endpoint) / 10.0
        return nxt if nxt != endpoint else trunc
    return anchor + (trunc - anchor) * 10.0


def _node_grid(lo: float, hi: float, anchor: float, per_decade: int) -> np.ndarray:
    scale = max(1.0, abs(anchor))

    def side(end):
        d_total = abs(end - anchor)
        if d_total == 0.0:
            return np.array([])
        d_min = min(1e-6 * scale, d_total / 4.0)
        n_dec = math.log10(d_total / d_min)
        n = max(8, int(per_decade * n_dec))
        ds = np.geomspace(d_min, d_total, n)
        return anchor + np.sign(end - anchor) * ds

    nodes = np.concatenate([side(lo), [anchor], side(hi)])
    return np.unique(nodes)


_BIG = 1e100


def _shoot(rhs, x_start: float, x_end: float, y0, t_eval: np.ndarray):
    """Integrate the linear system with on-the-fly renormalization.

    Returns (logf, q) sampled at t_eval, where q = g/f is scale-invariant and
    logf absorbs the renormalizations.
    """
    n = len(t_eval)
    logf = np.full(n, np.nan)
    qv = np.full(n, np.nan)
    state = np.asarray(y0, dtype=float)
    logk = 0.0
    cur = x_start
    idx = 0

    def too_big(t, y):
        return max(abs(y[0]), abs(y[1])) - _BIG

    too_big.terminal = True
    too_big.direction = 1

    for _ in range(64):
        remaining = t_eval[idx:]
        sol = solve_ivp(
            rhs,
            (cur, x_end),
            state,
            method="DOP853",
            t_eval=remaining if len(remaining) else None,
            events=too_big,
            rtol=1e-10,
            atol=1e-60,
            dense_output=False,
        )
        if not sol.success and sol.status != 1:
            raise SolverError(
                f"eigenfunction integration failed at x={sol.t[-1] if len(sol.t) else cur}",
                {"message": sol.message},
            )
        m = len(sol.t)
        if m:
            f = sol.y[0]
            g = sol.y[1]
            with np.errstate(divide="ignore", invalid="ignore"):
                logf[idx : idx + m] = np.log(np.abs(f)) + logk
                qv[idx : idx + m] = g / f
            idx += m
        if sol.status == 1:  # renormalize and continue
            cur = float(sol.t_events[0][0])
            ev_state = sol.y_events[0][0]
            norm = max(abs(ev_state[0]), abs(ev_state[1]))
            state = ev_state / norm
            logk += math.log(norm)
            continue
        break
    else:
        raise SolverError("eigenfunction integration: too many renormalizations")
    return logf, qv


def fundamental_solutions(
    spec: DiffusionSpec,
    ss: ScaleSpeed,
    alpha: float,
    *,
    target_delta: float = 1e-8,
    max_pushes: int = 6,
    per_decade: int = 32,
) -> FundamentalPair:
    """Shoot the increasing/decreasing solutions of A f = alpha f.

    Boundary conditions by endpoint class: accessible (regular/exit) and
    natural endpoints start from (f, g) = (0, +-1) at the truncation (the
    minimal solution emerges under renormalized shooting); entrance endpoints
    start from (1, 0).  Truncations are pushed by factors of 10 until the
    Wronskian moves by less than target_delta relative.
    """
    if alpha <= 0:
        raise PreconditionError("alpha must be positive")
    anchor = ss.anchor
    left_class = ss.classify_endpoint("left")["class"]
    right_class = ss.classify_endpoint("right")["class"]

    lo = _trunc_initial(spec.l, anchor)
    hi = _trunc_initial(spec.r, anchor)
    prev_w = None
    result = None
    pushes = 0
    converged = False
    for pushes in range(max_pushes):
        s_prime, m_dens = ss.fast_coefficients(lo, hi)

        def rhs(x, y):
            return (y[1] * s_prime(x), alpha * y[0] * m_dens(x))

        nodes = _node_grid(lo, hi, anchor, per_decade)
        interior = nodes[1:-1]
        psi0 = (1.0, 0.0) if left_class == "entrance" else (0.0, 1.0)
        phi0 = (1.0, 0.0) if right_class == "entrance" else (0.0, -1.0)
        logpsi, qpsi = _shoot(rhs, nodes[0], nodes[-1], psi0, interior)
        logphi, qphi = _shoot(rhs, nodes[-1], nodes[0], phi0, interior[::-1])
        logphi, qphi = logphi[::-1], qphi[::-1]

        ok = np.isfinite(logpsi) & np.isfinite(logphi) & np.isfinite(qpsi) & np.isfinite(qphi)
        xg, logpsi, logphi, qpsi, qphi = (
            interior[ok],
            logpsi[ok],
            logphi[ok],
            qpsi[ok],
            qphi[ok],
        )
        if len(xg) < 8:
            raise SolverError("eigenfunction shooting produced too few valid nodes")
        ia = int(np.argmin(np.abs(xg - anchor)))
        logpsi = logpsi - logpsi[ia]
        logphi = logphi - logphi[ia]
        w = qpsi[ia] - qphi[ia]
        if w <= 0 or not math.isfinite(w):
            raise SolverError(f"non-positive Wronskian {w!r}")
        result = (xg, logpsi, logphi, qpsi, qphi, w, lo, hi)
        if prev_w is not None and abs(w - prev_w) <= target_delta * abs(w):
            converged = True
            break
        prev_w = w
        lo = _trunc_push(lo, spec.l, anchor)
        hi = _trunc_push(hi, spec.r, anchor)

    xg, logpsi, logphi, qpsi, qphi, w, lo, hi = result
    sp = ss.s_prime_vec(xg)
    rpsi = qpsi * sp
    rphi = qphi * sp
    # quintic Hermite in log space: the ODE supplies (log f)'' exactly via
    # (log f)'' = 2 (alpha - b r) / sigma^2 - r^2, so power/exponential
    # solutions interpolate to near machine accuracy
    sig2 = np.asarray(spec.sigma(xg), dtype=float) ** 2
    bv = np.asarray(spec.b(xg), dtype=float)
    d2psi = 2.0 * (alpha - bv * rpsi) / sig2 - rpsi**2
    d2phi = 2.0 * (alpha - bv * rphi) / sig2 - rphi**2
    logpsi_spline = BPoly.from_derivatives(xg, np.column_stack([logpsi, rpsi, d2psi]))
    logphi_spline = BPoly.from_derivatives(xg, np.column_stack([logphi, rphi, d2phi]))
    wron = np.exp(logpsi + logphi) * (qpsi - qphi)
    fp = FundamentalPair(
        alpha=alpha,
        anchor=float(xg[ia]),
        x_lo=float(xg[0]),
        x_hi=float(xg[-1]),
        wronskian=float(w),
        ss=ss,
        _logpsi=logpsi_spline,
        _logphi=logphi_spline,
        _dlogpsi=logpsi_spline.derivative(),
        _dlogphi=logphi_spline.derivative(),
        diagnostics={
            "pushes": pushes + 1,
            "converged": converged,
            "left_class": left_class,
            "right_class": right_class,
            "boundary_condition_left": "entrance (1,0)"
            if left_class == "entrance"
            else "decaying (0,1)",
            "boundary_condition_right": "entrance (1,0)"
            if right_class == "entrance"
            else "decaying (0,-1)",
            "wronskian_rel_spread": float(
                (np.max(wron) - np.min(wron)) / np.median(wron)
            ),
        },
    )
    return fp


def alpha_potential(fp: FundamentalPair, x, y):
    """u_alpha(x, y) = psi(x ^ y) phi(x v y) / w."""
    return fp.u(x, y)


def hitting_laplace(fp: FundamentalPair, x, y):
    """E^x[exp(-alpha T_y)] = u_alpha(x, y) / u_alpha(y, y), in (0, 1]."""
    x = np.asarray(x, dtype=float)
    ynum = float(y)
    out = np.where(
        x <= ynum,
        np.exp(fp.log_psi(x) - fp.log_psi(ynum)),
        np.exp(fp.log_phi(x) - fp.log_phi(ynum)),
    )
    out = np.minimum(out, 1.0)
    return out if out.shape else float(out)


# ---------------------------------------------------------------------------
# Kernel wrapper


@dataclass
class PotentialKernel:
    """Uniform access to u(x, y): zero-potential or alpha-potential mode."""

    mode: str  # "zero" | "alpha"
    ss: ScaleSpeed
    fp: Optional[FundamentalPair] = None

    @classmethod
    def zero(cls, ss: ScaleSpeed) -> "PotentialKernel":
        _scale_case(ss)  # raises for recurrent input
        return cls("zero", ss)

    @classmethod
    def alpha(cls, fp: FundamentalPair) -> "PotentialKernel":
        return cls("alpha", fp.ss, fp)

    def u(self, x, y):
        if self.mode == "zero":
            return potential_density(self.ss, x, y)
        return self.fp.u(x, y)


# ---------------------------------------------------------------------------
# Discounted two-sided exit (closed form)


def two_sided_exit_discount(
    fp: FundamentalPair,
    a: float,
    b: float,
    x: float,
    y: float,
    *,
    branch: str = "auto",
) -> float:
    """E^{h,x}[1_{T_a < T_b} exp(-L^y_{T_a} / (2 u_l(y,y)))] under the
    positive-recurrent transform anchored at y (and the mirrored T_b branch).

    Uses the transformed scale s_h(z) = int_y^z s'(w)/u_l(w, y)^2 dw and the
    exponential law of the total local time of the exit-conditioned process.
    """
    spec = fp.ss.spec
    if not (spec.l < a < b < spec.r):
        raise PreconditionError("need l < a < b < r")
    if not (a <= x <= b and a <= y <= b):
        raise PreconditionError("need x, y in [a, b]")
    if branch == "auto":
        if y <= x:
            branch = "a"
        elif y >= x:
            branch = "b"
    if branch == "a" and not y <= x:
        raise PreconditionError("T_a branch requires y <= x")
    if branch == "b" and not y >= x:
        raise PreconditionError("T_b branch requires y >= x")

    ss = fp.ss
    u_yy = fp.u(y, y)

    def sh_prime(z):
        return ss.s_prime(z) / fp.u(z, y) ** 2

    sh = CumulativeIntegral(sh_prime, y)
    sh_a, sh_b, sh_x = sh(a), sh(b), sh(x)

    if branch == "a":
        hit = (sh_b - sh_x) / (sh_b - sh_a)
        integral = quad(
            lambda z: sh_prime(z) / (sh_b - sh(z)) ** 2, a, y, limit=200
        )[0]
        denom = 1.0 + integral * sh_b**2 * u_yy / ss.s_prime(y)
    else:
        hit = (sh_x - sh_a) / (sh_b - sh_a)
        integral = quad(
            lambda z: sh_prime(z) / (sh(z) - sh_a) ** 2, y, b, limit=200
        )[0]
        denom = 1.0 + integral * sh_a**2 * u_yy / ss.s_prime(y)
    return hit / denom
