"""Regular one-dimensional diffusions on an interval (l, r).

Scale function and speed density are produced by nested adaptive quadrature of
the coefficient functions; improper integrals toward the endpoints are decided
by a truncation-growth heuristic that admits an explicit inconclusive state.
The same machinery drives boundary classification (regular / exit / entrance /
natural) and the martingale / strict-positivity dichotomies for nonnegative
diffusions in natural scale.
"""

from __future__ import annotations

import bisect
import math
import threading
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .errors import InconclusiveError, PreconditionError

__all__ = [
    "DiffusionSpec",
    "ScaleSpeed",
    "LimitResult",
    "ClassificationReport",
    "CumulativeIntegral",
    "improper_limit",
    "domain_anchor",
    "probe_points",
    "check_engelbert_schmidt",
    "scale_speed",
    "classify",
]

_QUAD_OPTS = dict(epsabs=1e-12, epsrel=1e-11, limit=200)


def _quad(f, a, b):
    if a == b:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            val, _ = integrate.quad(f, a, b, **_QUAD_OPTS)
        except Exception:
            return math.nan
    return val


# ---------------------------------------------------------------------------
# Diffusion data


@dataclass
class DiffusionSpec:
    """Coefficients sigma, b on (l, r); reached boundaries absorb."""

    sigma: Callable[[np.ndarray], np.ndarray]
    b: Callable[[np.ndarray], np.ndarray]
    l: float
    r: float
    label: str = ""
    _boundary_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.l < self.r:
            raise PreconditionError(f"need l < r, got ({self.l}, {self.r})")

    def sigma_at(self, x: float) -> float:
        return float(np.asarray(self.sigma(np.asarray(x, dtype=float))))

    def b_at(self, x: float) -> float:
        return float(np.asarray(self.b(np.asarray(x, dtype=float))))

    def drift_is_zero(self, n_probe: int = 21, tol: float = 1e-13) -> bool:
        xs = probe_points(self.l, self.r, n_probe)
        bv = np.asarray(self.b(xs), dtype=float)
        return bool(np.all(np.abs(bv) <= tol * (1.0 + np.abs(xs))))

    def sigma_constant(self, n_probe: int = 33) -> Optional[float]:
        """The constant value of sigma when it probes constant, else None."""
        xs = probe_points(self.l, self.r, n_probe)
        sv = np.asarray(self.sigma(xs), dtype=float)
        if np.all(np.abs(sv - sv[0]) <= 1e-13 * (1.0 + abs(sv[0]))):
            return float(sv[0])
        return None


def domain_anchor(l: float, r: float) -> float:
    """Midpoint of (l, r) through the u/(1-u) substitution at infinite ends."""
    if math.isfinite(l) and math.isfinite(r):
        return 0.5 * (l + r)
    if math.isfinite(l):
        return l + 1.0
    if math.isfinite(r):
        return r - 1.0
    return 0.0


def probe_points(l: float, r: float, n: int = 11) -> np.ndarray:
    """Interior probe grid, denser toward finite endpoints than infinite ones."""
    u = np.linspace(0.05, 0.95, n)
    if math.isfinite(l) and math.isfinite(r):
        return l + u * (r - l)
    if math.isfinite(l):
        return l + u / (1.0 - u)
    if math.isfinite(r):
        return r - (1.0 - u) / u
    return u / (1.0 - u) - (1.0 - u) / u


# ---------------------------------------------------------------------------
# Cached cumulative quadrature and improper-limit verdicts


class CumulativeIntegral:
    """I(x) = integral of f from anchor to x, with monotone-insert caching.

    Every evaluated x is cached (sorted), and new points integrate from the
    nearest cached node, so repeated evaluations never re-integrate a stretch.
    Thread-safe for concurrent readers.
    """

    def __init__(self, f: Callable[[float], float], anchor: float, seed_points=()):
        self.f = f
        self.anchor = float(anchor)
        self._xs = [self.anchor]
        self._vals = [0.0]
        self._lock = threading.RLock()
        for p in sorted(seed_points):
            if p != self.anchor:
                self(p)

    def __call__(self, x: float) -> float:
        x = float(x)
        with self._lock:
            i = bisect.bisect_left(self._xs, x)
            if i < len(self._xs) and self._xs[i] == x:
                return self._vals[i]
            # integrate from the nearest cached node
            if i == 0:
                j = 0
            elif i == len(self._xs):
                j = i - 1
            else:
                j = i if self._xs[i] - x < x - self._xs[i - 1] else i - 1
            val = self._vals[j] + _quad(self.f, self._xs[j], x)
            # cache only sane magnitudes; huge values would poison later
            # nearest-node lookups with catastrophic roundoff
            if math.isfinite(val) and abs(val) < 1e100:
                self._xs.insert(i, x)
                self._vals.insert(i, val)
            return val

    def vector(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        flat = xs.ravel()
        order = np.argsort(flat)
        out = np.empty_like(flat)
        for k in order:
            out[k] = self(flat[k])
        return out.reshape(xs.shape)


@dataclass(frozen=True)
class LimitResult:
    """Verdict for the limit of a cumulative integral at an endpoint."""

    verdict: str  # "finite" | "infinite" | "inconclusive"
    value: Optional[float]
    sequence: tuple[float, ...] = ()

    @property
    def finite(self) -> bool:
        return self.verdict == "finite"

    @property
    def infinite(self) -> bool:
        return self.verdict == "infinite"


def improper_limit(
    cum: Callable[[float], float],
    anchor: float,
    endpoint: float,
    *,
    factor: float = 10.0,
    growth: float = 1.5,
    growth_runs: int = 6,
    rel_tol: float = 1e-8,
    max_pushes: int = 40,
) -> LimitResult:
    """Decide lim cum(x) as x -> endpoint by geometric truncation pushes.

    Declared infinite after `growth_runs` successive pushes each growing the
    magnitude by >= `growth`, or after `growth_runs` pushes whose increments
    refuse to decay (catches logarithmic divergence, e.g. harmonic tails);
    declared finite when successive truncations agree to rel_tol (then
    Aitken-extrapolated); otherwise inconclusive.
    """
    sign = 1.0 if endpoint > anchor else -1.0
    if math.isinf(endpoint):
        gap0 = max(1.0, abs(anchor))
        xs = (anchor + sign * gap0 * factor**k for k in range(max_pushes))
    else:
        d0 = abs(endpoint - anchor) / factor
        xs = (endpoint - sign * d0 * factor ** (-k) for k in range(max_pushes))

    def aitken(s):
        d1 = s[-1] - s[-2]
        d2 = s[-1] - 2.0 * s[-2] + s[-3]
        if d2 != 0.0 and abs(d1 * d1 / d2) < max(1.0, abs(s[-1])):
            return s[-1] - d1 * d1 / d2
        return s[-1]

    seq: list[float] = []
    run = 0
    flat_run = 0
    contract_run = 0
    aitken_prev = None
    prev_x = anchor
    for x in xs:
        if x == prev_x or x == endpoint:
            break
        prev_x = x
        v = cum(x)
        if math.isnan(v):
            # overflow mid-sequence counts as divergence if already growing
            if len(seq) >= 2 and abs(seq[-1] - seq[0]) >= growth * abs(
                seq[-2] - seq[0]
            ):
                return LimitResult("infinite", None, tuple(seq))
            break
        if math.isinf(v):
            seq.append(v)
            return LimitResult("infinite", None, tuple(seq))
        seq.append(v)
        if len(seq) < 2:
            continue
        if abs(seq[-1] - seq[-2]) <= rel_tol * max(1.0, abs(seq[-1])):
            value = aitken(seq) if len(seq) >= 3 else seq[-1]
            return LimitResult("finite", value, tuple(seq))
        m_prev = abs(seq[-2] - seq[0])
        m_cur = abs(seq[-1] - seq[0])
        if m_prev > 0 and m_cur >= growth * m_prev:
            run += 1
            if run >= growth_runs:
                return LimitResult("infinite", None, tuple(seq))
        else:
            run = 0
        if len(seq) >= 3:
            d_prev = abs(seq[-2] - seq[-3])
            d_cur = abs(seq[-1] - seq[-2])
            significant = d_cur > 10.0 * rel_tol * max(1.0, abs(seq[-1]))
            if significant and d_cur >= 0.98 * d_prev:
                flat_run += 1
                if flat_run >= growth_runs:
                    return LimitResult("infinite", None, tuple(seq))
            else:
                flat_run = 0
            # geometrically contracting increments: accelerate with Aitken
            # (exact for power-law tails) instead of pushing forever
            if 0.0 < d_cur <= 0.95 * d_prev:
                contract_run += 1
                a = aitken(seq)
                if (
                    contract_run >= growth_runs
                    and aitken_prev is not None
                    and abs(a - aitken_prev) <= rel_tol * max(1.0, abs(a))
                ):
                    return LimitResult("finite", a, tuple(seq))
                aitken_prev = a
            else:
                contract_run = 0
                aitken_prev = None
    return LimitResult("inconclusive", None, tuple(seq))


# ---------------------------------------------------------------------------
# Scale function and speed density


class ScaleSpeed:
    """Scale s, derivative s', and speed density m for a DiffusionSpec.

    s is computed through nested quadrature of exp(-2 * integral of b/sigma^2)
    and normalized so that s(l) = 0 / s(r) = 1 whenever the corresponding limit
    is finite; the anchor takes the remaining freedom (s(anchor) in {0, 1} when
    only one limit is finite, s(anchor) = 0 for recurrent diffusions).
    """

    def __init__(self, spec: DiffusionSpec):
        self.spec = spec
        self.anchor = domain_anchor(spec.l, spec.r)
        self._ib = CumulativeIntegral(self._b_over_sigma2, self.anchor)
        self._sraw = CumulativeIntegral(self._sprime_raw_quad, self.anchor)
        # natural scale (b == 0): s_raw(x) = x - anchor exactly (verified
        # against the quadrature at a few probes); all scale quantities and
        # the raw limits then come for free
        self._affine = False
        if spec.drift_is_zero(33):
            probes = probe_points(spec.l, spec.r, 5)
            if all(
                abs(self._sraw(p) - (p - self.anchor)) <= 1e-11 * (1.0 + abs(p))
                for p in probes
            ):
                self._affine = True
        if self._affine:
            self.raw_left = (
                LimitResult("finite", spec.l - self.anchor)
                if math.isfinite(spec.l)
                else LimitResult("infinite", None)
            )
            self.raw_right = (
                LimitResult("finite", spec.r - self.anchor)
                if math.isfinite(spec.r)
                else LimitResult("infinite", None)
            )
        else:
            self.raw_left = improper_limit(self._sraw, self.anchor, spec.l)
            self.raw_right = improper_limit(self._sraw, self.anchor, spec.r)
        self._shift, self._scale = self._normalization()
        self.left_limit = self._normalized_limit(self.raw_left)
        self.right_limit = self._normalized_limit(self.raw_right)
        self._lock = threading.RLock()
        self._grid = None  # (nodes, s_raw, sprime_raw, ib) Hermite splines
        self._cover = None

    # -- raw integrands -----------------------------------------------------

    def _b_over_sigma2(self, z: float) -> float:
        s = self.spec.sigma_at(z)
        return self.spec.b_at(z) / (s * s)

    def _sprime_raw_quad(self, z: float) -> float:
        arg = -2.0 * self._ib(z)
        if arg > 709.0:  # exp overflow: saturate so divergence detection sees it
            return math.inf
        return math.exp(arg)

    def _sprime_raw(self, z: float) -> float:
        if self._affine:
            return 1.0
        return self._sprime_raw_quad(z)

    # -- normalization ------------------------------------------------------

    def _normalization(self):
        lf, rf = self.raw_left.finite, self.raw_right.finite
        if lf and rf:
            return self.raw_left.value, self.raw_right.value - self.raw_left.value
        if lf:
            return self.raw_left.value, -self.raw_left.value
        if rf:
            return 0.0, self.raw_right.value
        return 0.0, 1.0

    def _normalized_limit(self, raw: LimitResult) -> LimitResult:
        if not raw.finite:
            return raw
        return LimitResult(
            "finite", (raw.value - self._shift) / self._scale, raw.sequence
        )

    @property
    def transient(self) -> bool:
        return self.raw_left.finite or self.raw_right.finite

    @property
    def recurrent_verdict(self) -> str:
        if self.raw_left.finite or self.raw_right.finite:
            return "no"
        if self.raw_left.infinite and self.raw_right.infinite:
            return "yes"
        return "inconclusive"

    # -- scalar evaluation --------------------------------------------------

    def s(self, x: float) -> float:
        if self._affine:
            return (x - self.anchor - self._shift) / self._scale
        return (self._sraw(x) - self._shift) / self._scale

    def s_prime(self, x: float) -> float:
        if self._affine:
            return 1.0 / self._scale
        return self._sprime_raw(x) / self._scale

    def m_density(self, x: float) -> float:
        sig = self.spec.sigma_at(x)
        return 2.0 / (self._sprime_raw(x) * sig * sig) * self._scale

    def s_inverse(self, z: float) -> float:
        lo, hi = self._bracket(z)
        if self.s(lo) == z:
            return lo
        if self.s(hi) == z:
            return hi
        return brentq(lambda x: self.s(x) - z, lo, hi, xtol=1e-14, rtol=1e-15)

    def _bracket(self, z: float):
        l, r = self.spec.l, self.spec.r
        step = max(1.0, abs(self.anchor))
        lo = hi = self.anchor
        for _ in range(200):
            if self.s(lo) <= z:
                break
            lo = (lo + l) / 2.0 if math.isfinite(l) else lo - step
            step *= 2.0
        else:
            raise PreconditionError(f"cannot bracket s-inverse of {z}")
        step = max(1.0, abs(self.anchor))
        for _ in range(200):
            if self.s(hi) >= z:
                break
            hi = (hi + r) / 2.0 if math.isfinite(r) else hi + step
            step *= 2.0
        else:
            raise PreconditionError(f"cannot bracket s-inverse of {z}")
        return lo, hi

    # -- vectorized evaluation over an eagerly built Hermite grid ------------

    def _side_nodes(self, endpoint: float, depth: float):
        per_decade = 32
        if math.isfinite(endpoint):
            d_total = abs(endpoint - self.anchor)
            # approach the endpoint geometrically down to d_total * 10^-depth
            n = int(per_decade * depth)
            fracs = 1.0 - 10.0 ** (-np.arange(1, n + 1) / per_decade)
            return self.anchor + (endpoint - self.anchor) * fracs
        sign = 1.0 if endpoint > self.anchor else -1.0
        d_min = 1e-6 * max(1.0, abs(self.anchor))
        n = int(per_decade * depth)
        ds = d_min * 10.0 ** (np.arange(n + 1) / per_decade)
        return self.anchor + sign * ds

    def _build_grid(self, depth_left: float, depth_right: float):
        nodes = np.concatenate(
            [
                self._side_nodes(self.spec.l, depth_left),
                [self.anchor],
                self._side_nodes(self.spec.r, depth_right),
            ]
        )
        nodes = np.unique(nodes)
        sraw = self._sraw.vector(nodes)
        ib = self._ib.vector(nodes)
        sprime = np.exp(-2.0 * ib)
        good = np.isfinite(sraw) & np.isfinite(sprime)
        nodes, sraw, ib, sprime = nodes[good], sraw[good], ib[good], sprime[good]
        b_over = np.array([self._b_over_sigma2(z) for z in nodes])
        self._grid = (
            CubicHermiteSpline(nodes, sraw, sprime),
            CubicHermiteSpline(nodes, ib, b_over),
        )
        self._cover = (nodes[0], nodes[-1], depth_left, depth_right)

    _MAX_DEPTH_FINITE = 13.0  # beyond 1e-13 relative distance, clamp
    _MAX_DEPTH_INFINITE = 60.0  # out to ~1e54 * scale

    def _needed_depth(self, side: str, target: float, current: float) -> float:
        endpoint = self.spec.l if side == "left" else self.spec.r
        if math.isfinite(endpoint):
            dist = abs(target - endpoint)
            full = abs(endpoint - self.anchor)
            if dist <= 0.0:
                return self._MAX_DEPTH_FINITE
            depth = math.log10(full / dist) + 0.5
            return min(max(depth, current), self._MAX_DEPTH_FINITE)
        d_min = 1e-6 * max(1.0, abs(self.anchor))
        dist = abs(target - self.anchor)
        if dist <= d_min:
            return current
        depth = math.log10(dist / d_min) + 0.5
        return min(max(depth, current), self._MAX_DEPTH_INFINITE)

    def _ensure_cover(self, lo: float, hi: float):
        with self._lock:
            if self._grid is None:
                self._build_grid(12.0, 12.0)
            c_lo, c_hi, dl, dr = self._cover
            need_l = lo < c_lo and not np.isclose(lo, c_lo)
            need_r = hi > c_hi and not np.isclose(hi, c_hi)
            if not (need_l or need_r):
                return
            # jump straight to the required depth; queries beyond the caps
            # are clamped by the evaluators
            new_dl = self._needed_depth("left", lo, dl) if need_l else dl
            new_dr = self._needed_depth("right", hi, dr) if need_r else dr
            if new_dl > dl or new_dr > dr:
                self._build_grid(new_dl, new_dr)

    def _clamped(self, x: np.ndarray) -> np.ndarray:
        c_lo, c_hi, _, _ = self._cover
        return np.clip(x, c_lo, c_hi)

    def s_vec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._affine:
            return (x - (self.anchor + self._shift)) / self._scale
        self._ensure_cover(float(np.min(x)), float(np.max(x)))
        return (self._grid[0](self._clamped(x)) - self._shift) / self._scale

    def s_prime_vec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._affine:
            return np.full_like(x, 1.0 / self._scale)
        self._ensure_cover(float(np.min(x)), float(np.max(x)))
        return np.exp(-2.0 * self._grid[1](self._clamped(x))) / self._scale

    def s_and_prime_vec(self, x) -> tuple[np.ndarray, np.ndarray]:
        """One coverage check, both values: the simulation hot path."""
        x = np.asarray(x, dtype=float)
        if self._affine:
            return (
                (x - (self.anchor + self._shift)) / self._scale,
                np.full_like(x, 1.0 / self._scale),
            )
        self._ensure_cover(float(np.min(x)), float(np.max(x)))
        xc = self._clamped(x)
        s = (self._grid[0](xc) - self._shift) / self._scale
        sp = np.exp(-2.0 * self._grid[1](xc)) / self._scale
        return s, sp

    def m_density_vec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        sig = np.asarray(self.spec.sigma(x), dtype=float)
        return 2.0 / (self.s_prime_vec(x) * sig * sig)

    def fast_coefficients(self, lo: float, hi: float):
        """Scalar (s', m') evaluators backed by the Hermite grid, for ODE RHS use."""
        scale = self._scale
        sigma_at = self.spec.sigma_at
        if self._affine:
            sp_const = 1.0 / scale

            def s_prime_aff(z: float) -> float:
                return sp_const

            def m_density_aff(z: float) -> float:
                sig = sigma_at(z)
                return 2.0 * scale / (sig * sig)

            return s_prime_aff, m_density_aff

        self._ensure_cover(lo, hi)
        ib_spline = self._grid[1]

        def s_prime(z: float) -> float:
            return math.exp(-2.0 * float(ib_spline(z))) / scale

        def m_density(z: float) -> float:
            sig = sigma_at(z)
            return 2.0 * scale / (math.exp(-2.0 * float(ib_spline(z))) * sig * sig)

        return s_prime, m_density

    # -- boundary classification ---------------------------------------------

    def classify_endpoint(self, side: str) -> dict:
        """Feller-type classification of one endpoint.

        v1 = int M(z) ds(z) decides accessibility (Feller's test); v2 =
        int |s(z) - s(anchor)| m(dz) separates entrance from natural.
        """
        assert side in ("left", "right")
        cache = self.spec._boundary_cache
        key = ("class", side)
        if key in cache:
            return cache[key]
        endpoint = self.spec.l if side == "left" else self.spec.r
        sraw = (lambda z: z - self.anchor) if self._affine else self._sraw
        m_cum = CumulativeIntegral(lambda z: 2.0 / (self._sprime_raw(z) * self.spec.sigma_at(z) ** 2), self.anchor)
        v1_cum = CumulativeIntegral(lambda z: abs(m_cum(z)) * self._sprime_raw(z), self.anchor)
        v2_cum = CumulativeIntegral(lambda z: abs(sraw(z)) * 2.0 / (self._sprime_raw(z) * self.spec.sigma_at(z) ** 2), self.anchor)
        v1 = improper_limit(v1_cum, self.anchor, endpoint, max_pushes=24)
        v2 = improper_limit(v2_cum, self.anchor, endpoint, max_pushes=24)
        if v1.verdict == "inconclusive" or v2.verdict == "inconclusive":
            klass = None
        elif v1.finite:
            klass = "regular" if v2.finite else "exit"
        else:
            klass = "entrance" if v2.finite else "natural"
        accessible = (
            "yes" if v1.finite else "no" if v1.infinite else "inconclusive"
        )
        out = {"v1": v1, "v2": v2, "class": klass, "accessible": accessible}
        cache[key] = out
        return out


def scale_speed(spec: DiffusionSpec) -> ScaleSpeed:
    """Build the ScaleSpeed after checking the Engelbert-Schmidt conditions."""
    report = check_engelbert_schmidt(spec)
    if report.failures:
        raise PreconditionError(
            "Engelbert-Schmidt check failed at "
            + ", ".join(f"x={x:g} ({why})" for x, why in report.failures)
        )
    return ScaleSpeed(spec)


# ---------------------------------------------------------------------------
# Engelbert-Schmidt probe check


@dataclass
class ESReport:
    probes: tuple[float, ...]
    failures: tuple[tuple[float, str], ...]

    @property
    def ok(self) -> bool:
        return not self.failures


def check_engelbert_schmidt(spec: DiffusionSpec, probe_grid=None) -> ESReport:
    """Probe sigma > 0 and local integrability of (1 + |b|)/sigma^2."""
    if probe_grid is None:
        probe_grid = probe_points(spec.l, spec.r, 11)
    probe_grid = np.asarray(probe_grid, dtype=float)
    failures = []
    for x in probe_grid:
        if not (spec.l < x < spec.r):
            failures.append((float(x), "probe outside (l, r)"))
            continue
        eps = 0.5 * min(
            x - spec.l if math.isfinite(spec.l) else math.inf,
            spec.r - x if math.isfinite(spec.r) else math.inf,
            max(abs(x), 1.0) / 10.0,
        )
        try:
            sig = spec.sigma_at(x)
        except Exception as exc:  # expression domain errors
            failures.append((float(x), f"sigma evaluation failed: {exc}"))
            continue
        if not (math.isfinite(sig) and sig > 1e-8 * (1.0 + abs(x))):
            failures.append((float(x), f"sigma(x) = {sig!r} vanishes or is not positive"))
            continue

        def integrand(y):
            s = spec.sigma_at(y)
            return (1.0 + abs(spec.b_at(y))) / (s * s)

        # split at the probe so a singularity there sits at a quad endpoint
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                v1, e1 = integrate.quad(integrand, x - eps, x, limit=200)
                v2, e2 = integrate.quad(integrand, x, x + eps, limit=200)
                val, err = v1 + v2, e1 + e2
            except Exception:
                val, err = math.inf, math.inf
        if not math.isfinite(val) or abs(val) > 1e10 or err > max(1e-6, 1e-4 * abs(val)):
            failures.append((float(x), "local integral of (1+|b|)/sigma^2 diverges"))
    return ESReport(tuple(float(x) for x in probe_grid), tuple(failures))


# ---------------------------------------------------------------------------
# Classification report


@dataclass
class ClassificationReport:
    label: str
    left: dict
    right: dict
    recurrent: str
    martingale: str  # yes | no | inconclusive | n/a
    strictly_positive: str
    explosion_possible: str

    def to_dict(self) -> dict:
        def lim(v: LimitResult):
            return {"verdict": v.verdict, "value": v.value}

        def side(d):
            return {
                "scale_limit": lim(d["scale_limit"]),
                "accessible": d["accessible"],
                "boundary_class": d["class"],
            }

        return {
            "label": self.label,
            "left": side(self.left),
            "right": side(self.right),
            "recurrent": self.recurrent,
            "martingale": self.martingale,
            "strictly_positive": self.strictly_positive,
            "explosion_possible": self.explosion_possible,
        }


def classify(spec: DiffusionSpec, ss: Optional[ScaleSpeed] = None) -> ClassificationReport:
    """Scale limits, boundary classes, Feller test, and the natural-scale
    martingale / strict-positivity dichotomies (n/a outside natural scale on
    (0, inf))."""
    if ss is None:
        ss = scale_speed(spec)
    left = dict(ss.classify_endpoint("left"))
    right = dict(ss.classify_endpoint("right"))
    left["scale_limit"] = ss.left_limit
    right["scale_limit"] = ss.right_limit

    natural_case = (
        spec.l == 0.0 and math.isinf(spec.r) and spec.drift_is_zero()
    )
    if natural_case:
        mart_cum = CumulativeIntegral(
            lambda z: z / spec.sigma_at(z) ** 2, max(1.0, ss.anchor)
        )
        mart = improper_limit(mart_cum, max(1.0, ss.anchor), math.inf)
        pos_cum = CumulativeIntegral(
            lambda z: z / spec.sigma_at(z) ** 2, min(1.0, ss.anchor)
        )
        pos = improper_limit(pos_cum, min(1.0, ss.anchor), 0.0)
        martingale = (
            "yes" if mart.infinite else "no" if mart.finite else "inconclusive"
        )
        positive = "yes" if pos.infinite else "no" if pos.finite else "inconclusive"
    else:
        martingale = "n/a"
        positive = "n/a"

    # explosion = reaching an infinite endpoint in finite time
    expl = []
    for side, d, endpoint in (("left", left, spec.l), ("right", right, spec.r)):
        if math.isinf(endpoint):
            expl.append(d["accessible"])
    if "yes" in expl:
        explosion = "yes"
    elif expl and all(v == "no" for v in expl):
        explosion = "no"
    elif not expl:
        explosion = "no"
    else:
        explosion = "inconclusive"

    return ClassificationReport(
        label=spec.label,
        left=left,
        right=right,
        recurrent=ss.recurrent_verdict,
        martingale=martingale,
        strictly_positive=positive,
        explosion_possible=explosion,
    )
