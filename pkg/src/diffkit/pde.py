"""European pricing under bubble dynamics via the transformed Cauchy problem.

For a nonnegative natural-scale price process the value v(t, x) = E^x[g(X_t)]
factors as x * w(t, x), where w solves w_t = (1/2) sigma^2 w_xx +
(sigma^2/x) w_x with initial data g(x)/x, zero far-field behavior, and an
O(1/x) bound at the origin.  Unlike the naive equation v_t = (1/2) sigma^2
v_xx (which has many nonnegative solutions once X is a strict local
martingale), this problem is uniquely solvable, and its far-field condition is
exactly w = 0: truncation error is controlled by x_max placement, not by
guessing an asymptotic.

The naive solver is kept deliberately: it demonstrates that the answer of the
ill-posed equation tracks whatever far-field condition one imposes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .core import DiffusionSpec, scale_speed
from .errors import InstabilityError, PreconditionError

__all__ = [
    "Grid1D",
    "PricingProblem",
    "GridFunction",
    "solve_transformed",
    "price_european",
    "solve_naive",
    "sublinearity_profile",
]


@dataclass(frozen=True)
class Grid1D:
    nodes: np.ndarray  # strictly increasing, all positive
    n_t: int
    T: float

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if not np.all(np.diff(nodes) > 0):
            raise PreconditionError("grid nodes must be strictly increasing")
        if nodes[0] <= 0:
            raise PreconditionError("grid requires x_min > 0")
        if self.n_t < 1 or self.T <= 0:
            raise PreconditionError("need n_t >= 1 and T > 0")
        object.__setattr__(self, "nodes", nodes)

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @classmethod
    def log_centered(
        cls, spot: float, T: float, *, mult: float = 400.0, n_x: int = 800, n_t: int = 800
    ) -> "Grid1D":
        """Log-uniform nodes on [spot/mult, spot*mult] with the spot exactly in
        the middle (odd node count)."""
        if spot <= 0 or mult <= 1:
            raise PreconditionError("need spot > 0 and mult > 1")
        n_half = max(2, n_x // 2)
        lg = np.linspace(-math.log(mult), math.log(mult), 2 * n_half + 1)
        return cls(nodes=spot * np.exp(lg), n_t=n_t, T=T)


@dataclass
class PricingProblem:
    """Payoff g (continuous, nonnegative, at most linear growth) on a
    nonnegative natural-scale diffusion; g(0) = 0 is required when 0 is
    accessible."""

    spec: DiffusionSpec
    payoff: Callable
    T: float
    spot: float
    zero_accessible: Optional[bool] = None

    def __post_init__(self):
        if self.spec.l != 0.0 or not math.isinf(self.spec.r):
            raise PreconditionError("pricing requires the interval (0, inf)")
        if not self.spec.drift_is_zero():
            raise PreconditionError("pricing requires a natural-scale spec")
        if not (0.0 < self.spot < math.inf) or self.T < 0:
            raise PreconditionError("need spot > 0 and T >= 0")
        probes = self.spot * np.geomspace(1e-3, 1e6, 40)
        g = np.asarray(self.payoff(probes), dtype=float)
        if not np.all(np.isfinite(g)):
            raise PreconditionError("payoff must be finite on (0, inf)")
        if np.any(g < -1e-12):
            raise PreconditionError("payoff must be nonnegative")
        ratio = g / (1.0 + probes)
        if np.max(ratio) > 1e3 * (1.0 + ratio[0] + ratio[len(ratio) // 2]):
            raise PreconditionError("payoff exceeds linear growth on the probe grid")
        if self.zero_accessible is None:
            ss = scale_speed(self.spec)
            self.zero_accessible = ss.classify_endpoint("left")["accessible"] == "yes"
        if self.zero_accessible:
            g0 = float(np.asarray(self.payoff(np.asarray([1e-10 * self.spot])))[0])
            if abs(g0) > 1e-6 * (1.0 + self.spot):
                raise PreconditionError(
                    "payoff must vanish at 0 when 0 is accessible"
                )


@dataclass
class GridFunction:
    x: np.ndarray
    times: np.ndarray
    values: np.ndarray  # (n_times, n_x)
    meta: dict = field(default_factory=dict)

    def at(self, t: float, x) -> np.ndarray:
        """Value at the stored time level nearest t, linearly interpolated in x."""
        row = int(np.argmin(np.abs(self.times - t)))
        out = np.interp(np.asarray(x, dtype=float), self.x, self.values[row])
        return out

    def to_csv(self, fname: str, *, v_factor: bool = False):
        with open(fname, "w") as fh:
            fh.write("t,x,w,v\n" if v_factor else "t,x,value\n")
            for i, t in enumerate(self.times):
                for j, xx in enumerate(self.x):
                    if v_factor:
                        w = self.values[i, j]
                        fh.write(f"{t:.17g},{xx:.17g},{w:.17g},{xx * w:.17g}\n")
                    else:
                        fh.write(f"{t:.17g},{xx:.17g},{self.values[i, j]:.17g}\n")


def _operator(nodes: np.ndarray, a: np.ndarray, v: np.ndarray, peclet_switch=2.0):
    """Tridiagonal rows of L = a d^2/dx^2 + v d/dx on a nonuniform grid.

    Central first differences switch to one-sided upwind when the cell Peclet
    number |v| h / a exceeds the threshold (the 1/x drift blows up toward the
    origin and centered differencing would oscillate)."""
    N = len(nodes) - 1
    lower = np.zeros(N + 1)
    diag = np.zeros(N + 1)
    upper = np.zeros(N + 1)
    hm = nodes[1:-1] - nodes[:-2]
    hp = nodes[2:] - nodes[1:-1]
    ai = a[1:-1]
    vi = v[1:-1]

    l2 = 2.0 / (hm * (hm + hp))
    u2 = 2.0 / (hp * (hm + hp))
    d2 = -2.0 / (hm * hp)

    l1 = -hp / (hm * (hm + hp))
    u1 = hm / (hp * (hm + hp))
    d1 = (hp - hm) / (hm * hp)

    pe = np.abs(vi) * np.maximum(hm, hp) / np.maximum(ai, 1e-300)
    up = pe > peclet_switch
    fwd = vi >= 0.0
    l1 = np.where(up, np.where(fwd, 0.0, -1.0 / hm), l1)
    d1 = np.where(up, np.where(fwd, -1.0 / hp, 1.0 / hm), d1)
    u1 = np.where(up, np.where(fwd, 1.0 / hp, 0.0), u1)

    lower[1:-1] = ai * l2 + vi * l1
    diag[1:-1] = ai * d2 + vi * d1
    upper[1:-1] = ai * u2 + vi * u1
    return lower, diag, upper


class _ThetaStepper:
    """(I - theta dt L) w_new = (I + (1-theta) dt L) w_old on the interior,
    with Dirichlet right boundary and zero-second-derivative extrapolation on
    the left (folded into the first interior row)."""

    def __init__(self, nodes, lower, diag, upper, dt, theta, bc_right):
        self.nodes = nodes
        N = len(nodes) - 1
        self.N = N
        self.bc_right = bc_right
        rho = (nodes[1] - nodes[0]) / (nodes[2] - nodes[1])
        self.rho = rho

        def folded(co_l, co_d, co_u):
            # row 1 references w_0 = (1+rho) w_1 - rho w_2
            co_d = co_d.copy()
            co_u = co_u.copy()
            co_d[1] += co_l[1] * (1.0 + rho)
            co_u[1] -= co_l[1] * rho
            return co_d, co_u

        a_l = -theta * dt * lower
        a_d = 1.0 - theta * dt * diag
        a_u = -theta * dt * upper
        b_l = (1.0 - theta) * dt * lower
        b_d = 1.0 + (1.0 - theta) * dt * diag
        b_u = (1.0 - theta) * dt * upper
        self.a_d, self.a_u = folded(a_l, a_d, a_u)
        self.a_l = a_l
        self.b_d, self.b_u = folded(b_l, b_d, b_u)
        self.b_l = b_l

        # banded form for rows 1..N-1 (unknowns w_1..w_{N-1})
        n = N - 1
        ab = np.zeros((3, n))
        ab[0, 1:] = self.a_u[1 : N - 1]
        ab[1, :] = self.a_d[1:N]
        ab[2, :-1] = self.a_l[2:N]
        self.ab = ab

    def step(self, w: np.ndarray) -> np.ndarray:
        N = self.N
        rhs = (
            self.b_d[1:N] * w[1:N]
            + self.b_u[1:N] * np.concatenate([w[2:N], [self.bc_right]])
            + self.b_l[1:N] * np.concatenate([[0.0], w[1 : N - 1]])
        )
        # row 1's lower coefficient was folded; row N-1 implicit boundary term
        rhs[-1] -= self.a_u[N - 1] * self.bc_right
        sol = solve_banded((1, 1), self.ab, rhs)
        out = np.empty_like(w)
        out[1:N] = sol
        out[0] = (1.0 + self.rho) * sol[0] - self.rho * sol[1]
        out[N] = self.bc_right
        return out


def _march(nodes, a, v, w0, dt, n_t, bc_right, label):
    lower, diag, upper = _operator(nodes, a, v)
    w = np.asarray(w0, dtype=float).copy()
    levels = [w.copy()]
    # Rannacher start: the first two time slots run as four fully implicit
    # half-steps to damp kinked initial data, then Crank-Nicolson
    n_rann = min(2, n_t)
    implicit = _ThetaStepper(nodes, lower, diag, upper, dt / 2.0, 1.0, bc_right)
    cn = _ThetaStepper(nodes, lower, diag, upper, dt, 0.5, bc_right)
    for k in range(n_t):
        if k < n_rann:
            w = implicit.step(implicit.step(w))
        else:
            w = cn.step(w)
        if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > 1e10:
            raise InstabilityError(
                f"{label} solve unstable at step {k + 1}", suggested_dt=dt / 4.0
            )
        levels.append(w.copy())
    times = np.arange(n_t + 1) * dt
    return times, np.asarray(levels)


def solve_transformed(problem: PricingProblem, grid: Grid1D) -> GridFunction:
    """Crank-Nicolson (Rannacher-started) for the uniquely solvable w-equation.

    Far field is the exact condition w = 0; the left boundary extrapolates
    with zero second derivative (the inward 1/x drift keeps the transformed
    process off the origin)."""
    nodes = grid.nodes
    if not (nodes[0] < problem.spot < nodes[-1]):
        raise PreconditionError("grid must span the spot")
    sig = np.asarray(problem.spec.sigma(nodes), dtype=float)
    a = 0.5 * sig * sig
    v = sig * sig / nodes
    g = np.asarray(problem.payoff(nodes), dtype=float)
    w0 = g / nodes
    times, levels = _march(
        nodes, a, v, w0, grid.dt, grid.n_t, 0.0, "transformed"
    )
    return GridFunction(
        x=nodes,
        times=times,
        values=levels,
        meta={"equation": "transformed", "bc": "w(x_max) = 0, w''(x_min) = 0"},
    )


def price_european(problem: PricingProblem, grid: Grid1D):
    """v(T, spot) and the full surface v = x * w; v(t, 0) = 0 is appended when
    0 is an accessible boundary."""
    wfun = solve_transformed(problem, grid)
    v_values = wfun.values * wfun.x[None, :]
    x = wfun.x
    if problem.zero_accessible:
        x = np.concatenate([[0.0], x])
        v_values = np.concatenate(
            [np.zeros((v_values.shape[0], 1)), v_values], axis=1
        )
    vfun = GridFunction(
        x=x,
        times=wfun.times,
        values=v_values,
        meta={"equation": "transformed-v", "w": wfun},
    )
    price = float(vfun.at(problem.T, problem.spot))
    return price, vfun


def solve_naive(problem: PricingProblem, grid: Grid1D, farfield="payoff-linear") -> GridFunction:
    """The naive Black-Scholes equation v_t = (1/2) sigma^2 v_xx with a chosen
    far-field condition.

    For strict local martingales the answer follows the far-field choice (the
    equation has many nonnegative solutions); this solver exists to exhibit
    that gap against the transformed solver."""
    nodes = grid.nodes
    if not (nodes[0] < problem.spot < nodes[-1]):
        raise PreconditionError("grid must span the spot")
    sig = np.asarray(problem.spec.sigma(nodes), dtype=float)
    a = 0.5 * sig * sig
    v = np.zeros_like(nodes)
    g = np.asarray(problem.payoff(nodes), dtype=float)
    if farfield == "payoff-linear":
        bc = float(g[-1])
    elif isinstance(farfield, (tuple, list)) and farfield[0] == "dirichlet":
        bc = float(farfield[1])
    elif isinstance(farfield, dict) and "dirichlet" in farfield:
        bc = float(farfield["dirichlet"])
    else:
        raise PreconditionError(f"unknown farfield choice {farfield!r}")
    times, levels = _march(nodes, a, v, g, grid.dt, grid.n_t, bc, "naive")
    return GridFunction(
        x=nodes,
        times=times,
        values=levels,
        meta={"equation": "naive", "farfield": farfield, "bc_value": bc},
    )


def sublinearity_profile(problem: PricingProblem, grid: Grid1D, t: float, xs):
    """v(t, x)/x along xs: vanishes as x grows for strict local martingales."""
    _, vfun = price_european(problem, grid)
    xs = np.asarray(xs, dtype=float)
    return vfun.at(t, xs) / xs
