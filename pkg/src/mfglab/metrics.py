"""Twisted metrics: concave ground costs with certified contraction rates.

Given a class-K profile kappa and a noise level sigma_check, this module
builds the concave function f on [0, r_max] through the chain

    I(r)   = integral of s * (kappa(s))^-          (negative-part mass)
    phi    = exp(-I / (2 sigma_check^2))
    Phi    = integral of phi
    Psi    = integral of Phi / phi,   Z = Psi(R1)
    g      = 1 - Psi(min(r, R1)) / (2 Z)
    f      = integral of phi * g

together with the threshold radii R0, R1, the exponential rate
lam = sigma_check^2 / Z and the equivalence constant C = phi(R0) / 2.
f is linear-equivalent to the identity (C r <= f <= r) and satisfies the
certified differential inequality

    2 sigma_check^2 f'' - r kappa(r) f' <= -lam f       on (0, infinity).

Every integral is adaptive Simpson between table nodes; between nodes the
cumulative quantities are monotone-cubic interpolated, so evaluation is
closed-form-exact for piecewise-constant negative parts and accurate to
roughly 1e-9 otherwise.
"""

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import PchipInterpolator

from ._quad import adaptive_simpson, bisect_root, BracketError
from .profiles import MonotonicityProfile

_LOG_DEGENERATE = -600.0  # below this log(phi) the rate constants underflow


class MetricError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class TwistedMetric:
    profile: Optional[MonotonicityProfile]
    sigma_check: float
    R0: float
    R1: float
    Z: float
    lam: float
    C: float
    r_table: np.ndarray
    f_table: np.ndarray
    fprime_table: np.ndarray
    quad_tol: float
    degenerate: bool = False
    # cumulative tables backing evaluation and the analytic second derivative
    _I: Optional[PchipInterpolator] = None
    _Phi: Optional[PchipInterpolator] = None
    _fi: Optional[PchipInterpolator] = None
    _fpi: Optional[PchipInterpolator] = None

    # -- evaluation ---------------------------------------------------------
    def f(self, r):
        r_arr = np.clip(np.asarray(r, dtype=float), 0.0, None)
        if self._fi is not None:
            inside = self._fi(np.minimum(r_arr, self.r_table[-1]))
        else:
            inside = np.interp(np.minimum(r_arr, self.r_table[-1]),
                               self.r_table, self.f_table)
        # affine extension beyond the table keeps the tail slope C
        out = np.where(r_arr > self.r_table[-1],
                       self.f_table[-1] + self.C * (r_arr - self.r_table[-1]),
                       inside)
        return out if np.ndim(r) else float(out)

    def fprime(self, r):
        r_arr = np.clip(np.asarray(r, dtype=float), 0.0, None)
        if self._fpi is not None:
            out = self._fpi(np.minimum(r_arr, self.r_table[-1]))
        else:
            out = np.interp(np.minimum(r_arr, self.r_table[-1]),
                            self.r_table, self.fprime_table)
        out = np.where(r_arr > self.R1, self.C, out)
        return out if np.ndim(r) else float(out)

    def phi(self, r):
        if self._I is None:
            raise MetricError("metric loaded from tables has no analytic pieces")
        r_arr = np.minimum(np.asarray(r, dtype=float), self.r_table[-1])
        return np.exp(-self._I(r_arr) / (2.0 * self.sigma_check ** 2))

    def g(self, r):
        r_arr = np.asarray(r, dtype=float)
        return self.fprime(r_arr) / np.maximum(self.phi(r_arr), 1e-300)

    def fsecond(self, r):
        """f'' from the analytic pieces f'' = phi' g + phi g'."""
        if self._I is None or self._Phi is None:
            raise MetricError("metric loaded from tables has no analytic pieces")
        r_arr = np.asarray(r, dtype=float)
        scalar = np.ndim(r) == 0
        r_arr = np.atleast_1d(r_arr)
        neg = self.profile.negative_part_at(r_arr)
        phi = self.phi(r_arr)
        gval = self.fprime(r_arr) / np.maximum(phi, 1e-300)
        phip = -(r_arr * neg / (2.0 * self.sigma_check ** 2)) * phi
        gp = np.where(r_arr < self.R1,
                      -self._Phi(np.minimum(r_arr, self.R1))
                      / np.maximum(phi, 1e-300) / (2.0 * self.Z),
                      0.0)
        out = phip * gval + phi * gp
        out = np.where(r_arr > self.R1, 0.0, out)
        return float(out[0]) if scalar else out

    def q(self, t):
        return q_kernel(self.C, self.lam, self.sigma_check, t)


def _table_nodes(profile, R0, R1, n_table):
    """Dense radius grid: geometric + linear blend, refined at R0 and R1.

    Each coarse interval is split into 8 subintervals so that composite
    Simpson on the result carries interior cumulative values at every node.
    """
    r_max = profile.r_max
    lo = max(profile.r_min * 1e-3, 1e-12 * r_max)
    pieces = [np.array([0.0, r_max]), np.geomspace(lo, r_max, n_table // 4),
              np.linspace(0.0, r_max, n_table // 4)]
    for knot in (R0, R1):
        if 0.0 < knot < r_max:
            pieces.append(np.linspace(max(knot - 0.05, 0.0),
                                      min(knot + 0.05, r_max), 11))
            pieces.append(np.array([knot]))
    coarse = np.unique(np.concatenate(pieces))
    coarse = coarse[(coarse >= 0.0) & (coarse <= r_max)]
    steps = np.linspace(0.0, 1.0, 9)[1:]
    fine = (coarse[:-1, None] + np.diff(coarse)[:, None] * steps[None, :]).ravel()
    return np.unique(np.concatenate([coarse, fine]))


def _cumsimp(y, x):
    """Cumulative composite Simpson along a (possibly nonuniform) grid."""
    from scipy.integrate import cumulative_simpson
    return cumulative_simpson(y, x=x, initial=0.0)


def build_twisted_metric(profile: MonotonicityProfile, sigma_check,
                         quad_tol=1e-10, n_table=1200) -> TwistedMetric:
    """Construct the twisted metric of a certified class-K profile."""
    cert = profile.certification
    if cert is not None and not cert.is_K:
        raise MetricError(f"profile {profile.name!r} is not certified class K")
    sigma_check = float(sigma_check)
    sig2 = 2.0 * sigma_check ** 2
    r_max = profile.r_max

    R0 = bisect_root(lambda R: profile.tail_inf(R), 0.0, r_max, tol=1e-13)
    try:
        R1 = bisect_root(
            lambda R: profile.tail_inf(R) * R * (R - R0) - 4.0 * sigma_check ** 2,
            R0, r_max, tol=1e-13)
    except BracketError as exc:
        raise MetricError(
            f"radius grid too small: R1 not bracketed below r_max={r_max:g}") from exc

    nodes = _table_nodes(profile, R0, R1, n_table)
    neg = np.maximum(nodes, 1e-300) * profile.negative_part_at(nodes)
    I_nodes = _cumsimp(neg, nodes)
    I_interp = PchipInterpolator(nodes, I_nodes, extrapolate=True)

    if -I_nodes[-1] / sig2 < _LOG_DEGENERATE:
        zeros = np.zeros_like(nodes)
        return TwistedMetric(profile=profile, sigma_check=sigma_check,
                             R0=R0, R1=R1, Z=np.inf, lam=0.0, C=0.0,
                             r_table=nodes, f_table=zeros, fprime_table=zeros,
                             quad_tol=quad_tol, degenerate=True,
                             _I=I_interp, _Phi=None)

    phi_nodes = np.exp(-I_nodes / sig2)
    Phi_nodes = _cumsimp(phi_nodes, nodes)
    Phi_interp = PchipInterpolator(nodes, Phi_nodes, extrapolate=True)

    head = nodes <= R1
    ratio_head = Phi_nodes[head] * np.exp(I_nodes[head] / sig2)
    Psi_head = _cumsimp(ratio_head, nodes[head])
    Z = float(Psi_head[-1])
    Psi_nodes = np.full_like(nodes, Z)
    Psi_nodes[head] = Psi_head
    # audit pass: adaptive Simpson on the interpolated ratio must agree
    ratio_interp = PchipInterpolator(nodes[head], ratio_head, extrapolate=True)
    Z_audit = adaptive_simpson(lambda s: float(ratio_interp(s)), 0.0, R1,
                               tol=max(quad_tol, 1e-12) * max(1.0, Z))
    if abs(Z_audit - Z) > 1e-6 * max(1.0, Z):
        raise MetricError(f"quadrature disagreement on Z: {Z:g} vs {Z_audit:g}")

    lam = sigma_check ** 2 / Z
    # phi is constant past the exact R0 (negative part vanishes there), so
    # its settled end value is phi(R0) without the bisection grid bias
    C = 0.5 * float(np.exp(-I_nodes[-1] / sig2))
    g_nodes = 1.0 - np.minimum(Psi_nodes, Z) / (2.0 * Z)
    fp_nodes = phi_nodes * g_nodes
    f_nodes = _cumsimp(fp_nodes, nodes)

    tm = TwistedMetric(profile=profile, sigma_check=sigma_check,
                       R0=R0, R1=R1, Z=Z, lam=lam, C=C,
                       r_table=nodes, f_table=f_nodes, fprime_table=fp_nodes,
                       quad_tol=quad_tol, _I=I_interp, _Phi=Phi_interp,
                       _fi=PchipInterpolator(nodes, f_nodes),
                       _fpi=PchipInterpolator(nodes, fp_nodes))
    _check_invariants(tm)
    return tm


def _check_invariants(tm: TwistedMetric, tol=1e-7):
    r = tm.r_table[1:]
    f, fp = tm.f_table[1:], tm.fprime_table[1:]
    if np.any(f > r * (1.0 + tol) + tol) or np.any(f < tm.C * r * (1.0 - tol) - tol):
        raise MetricError("sandwich C r <= f <= r violated on the table")
    if np.any(fp > 1.0 + tol) or np.any(fp < tm.C * (1.0 - tol)):
        raise MetricError("derivative sandwich C <= f' <= 1 violated")
    if np.any(np.diff(tm.fprime_table) > tol):
        raise MetricError("f' is not non-increasing: f not concave")
    tail = tm.r_table > tm.R1 * (1.0 + 1e-9)
    if np.any(np.abs(tm.fprime_table[tail] - tm.C) > tol * (1.0 + tm.C)):
        raise MetricError("affine tail slope differs from C")


def check_differential_inequality(tm: TwistedMetric, radius_grid):
    """Positive part of 2 s^2 f'' - r kappa f' + lam f on the grid.

    Returns (max_residual, residuals, allowance) where the contract is
    residuals <= allowance = quad_tol * (1 + lam * f).
    """
    r = np.asarray(radius_grid, dtype=float)
    lhs = (2.0 * tm.sigma_check ** 2 * tm.fsecond(r)
           - r * tm.profile(r) * tm.fprime(r) + tm.lam * tm.f(r))
    residuals = np.maximum(lhs, 0.0)
    allowance = tm.quad_tol * (1.0 + tm.lam * tm.f(r))
    return float(np.max(residuals)), residuals, allowance


# ---------------------------------------------------------------------------
# coalescence kernel

def q_kernel(C, lam, sigma_check, t):
    """Time-decaying kernel converting f-distance into coalescence bounds.

    Short times decay like t^(-1/2); after 1/(2 lam) the exponential branch
    takes over, the two branches matching continuously.
    """
    t = float(t)
    if t <= 0.0:
        raise DomainError("q kernel needs t > 0")
    denom = C * sigma_check
    if denom <= 0.0:
        return np.inf
    if lam > 0.0 and t >= 1.0 / (2.0 * lam):
        return np.sqrt(lam * np.e) / (np.sqrt(np.pi) * denom) * np.exp(-lam * t)
    return 1.0 / (np.sqrt(2.0 * np.pi * t) * denom)


def q_kernel_arr(C, lam, sigma_check, t):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0):
        raise DomainError("q kernel needs t > 0")
    denom = C * sigma_check
    if denom <= 0.0:
        return np.full_like(t, np.inf)
    early = 1.0 / (np.sqrt(2.0 * np.pi * t) * denom)
    if lam <= 0.0:
        return early
    late = np.sqrt(lam * np.e) / (np.sqrt(np.pi) * denom) * np.exp(-lam * t)
    return np.where(t >= 1.0 / (2.0 * lam), late, early)


# ---------------------------------------------------------------------------
# exponentially weighted integrals of the kernel

def lemma_kernel_integrals(C, lam_bar, sigma0, lam, t, T, mode="forward",
                           quad_tol=1e-10):
    """Quadrature and closed-form bound for the weighted kernel integrals.

    forward:  integral over [t, T] of exp(-lam s)     q_{s-t} ds
    backward: integral over [t, T] of exp(-lam (T-s)) q_{s-t} ds
    where q carries the rate lam_bar and constants (C, sigma0).  The square
    root singularity at s = t is removed by the substitution s = t + v^2.
    """
    if lam >= lam_bar:
        raise DomainError("need lam < lam_bar")
    if T < t:
        raise DomainError("need t <= T")
    if T == t:
        quadrature = 0.0
    else:
        t_knee = 1.0 / (2.0 * lam_bar)
        span = T - t
        pref = 1.0 / (np.sqrt(2.0 * np.pi) * C * sigma0)

        def weight(u):
            # u = s - t
            return np.exp(-lam * (t + u)) if mode == "forward" \
                else np.exp(-lam * (T - t - u))

        def scaled_quad(fn, a, b):
            # pre-scale the absolute budget so integrals far below quad_tol
            # (deep exponential tails) are still resolved relatively
            xs = np.linspace(a, b, 257)
            scale = abs(simpson([fn(x) for x in xs], x=xs))
            tol = max(quad_tol * max(scale, 1e-30), 1e-280)
            return adaptive_simpson(fn, a, b, tol, rel=1e-9)

        v_hi = np.sqrt(min(span, t_knee))
        early = scaled_quad(lambda v: 2.0 * pref * weight(v * v), 0.0, v_hi)
        late = 0.0
        if span > t_knee:
            amp = np.sqrt(lam_bar * np.e) / (np.sqrt(np.pi) * C * sigma0)
            late = scaled_quad(
                lambda u: amp * np.exp(-lam_bar * u) * weight(u), t_knee, span)
        quadrature = early + late

    base = 1.0 / (np.sqrt(np.pi) * C * sigma0)
    if mode == "forward":
        bound = np.exp(-lam * t) * base * (1.0 / np.sqrt(lam_bar)
                                           + np.sqrt(lam_bar) / (lam + lam_bar))
    elif mode == "backward":
        bound = (np.exp(-lam * (T - t)) * np.exp(lam / (2.0 * lam_bar)) * base
                 * (1.0 / np.sqrt(lam_bar) + np.sqrt(lam_bar) / (lam_bar - lam)))
    else:
        raise DomainError(f"unknown mode {mode!r}")
    return {"quadrature": quadrature, "bound": bound, "mode": mode}


def q_integral(C, lam, sigma0, tau):
    """Closed form of the kernel mass integral of q_u du over [0, tau]."""
    if tau <= 0.0 or C <= 0.0:
        return 0.0 if tau <= 0.0 else np.inf
    knee = 1.0 / (2.0 * lam)
    head = 2.0 * np.sqrt(min(tau, knee)) / (np.sqrt(2.0 * np.pi) * C * sigma0)
    if tau <= knee:
        return head
    amp = np.sqrt(lam * np.e) / (np.sqrt(np.pi) * C * sigma0)
    return head + amp * (np.exp(-lam * knee) - np.exp(-lam * tau)) / lam


def q_weighted_integral(C, lam_bar, sigma0, t, T, weight, quad_tol=1e-10):
    """Quadrature of the integral over [t, T] of q_{s-t} * weight(s) ds.

    The square-root singularity at s = t is removed by substitution; weight
    must be smooth and nonnegative.
    """
    if T <= t:
        return 0.0
    if C <= 0.0:
        return np.inf
    span = T - t
    knee = 1.0 / (2.0 * lam_bar) if lam_bar > 0.0 else np.inf
    pref = 1.0 / (np.sqrt(2.0 * np.pi) * C * sigma0)
    v_hi = np.sqrt(min(span, knee))
    total = adaptive_simpson(lambda v: 2.0 * pref * weight(t + v * v),
                             0.0, v_hi, quad_tol, rel=1e-8)
    if span > knee:
        amp = np.sqrt(lam_bar * np.e) / (np.sqrt(np.pi) * C * sigma0)
        total += adaptive_simpson(
            lambda u: amp * np.exp(-lam_bar * u) * weight(t + u),
            knee, span, quad_tol, rel=1e-8)
    return total


# ---------------------------------------------------------------------------
# quadratically growing variant

@dataclass(frozen=True)
class QuadraticTwistedMetric:
    base: TwistedMetric
    a_bar: float
    sigma0_kappa_sq: float
    R1_bar: float
    lambda2: float
    C2: float

    def f_R(self, r):
        r_arr = np.asarray(r, dtype=float)
        p = np.maximum(r_arr - self.R1_bar, 0.0)
        return p ** 3 / (1.0 + self.sigma0_kappa_sq + r_arr)

    def f_R_prime(self, r):
        r_arr = np.asarray(r, dtype=float)
        p = np.maximum(r_arr - self.R1_bar, 0.0)
        d = 1.0 + self.sigma0_kappa_sq + r_arr
        return 3.0 * p ** 2 / d - p ** 3 / d ** 2

    def f_R_second(self, r):
        r_arr = np.asarray(r, dtype=float)
        p = np.maximum(r_arr - self.R1_bar, 0.0)
        d = 1.0 + self.sigma0_kappa_sq + r_arr
        return 6.0 * p / d - 6.0 * p ** 2 / d ** 2 + 2.0 * p ** 3 / d ** 3

    def f2(self, r):
        return self.base.f(r) + self.a_bar * self.f_R(r)

    def f2prime(self, r):
        return self.base.fprime(r) + self.a_bar * self.f_R_prime(r)

    def q(self, t):
        return q_kernel(self.base.C, self.base.lam, self.base.sigma_check, t)


def build_quadratic_metric(tm_half: TwistedMetric, sigma0, kappa_plus,
                           R1_choice) -> QuadraticTwistedMetric:
    """Augment a twisted metric by a cubic tail so it dominates r^2.

    tm_half must be built at sigma_check = sigma0 / sqrt(2).  kappa_plus is
    the certified asymptotic floor and R1_choice >= 1 a radius past which the
    profile stays above kappa_plus.  The decay rate lambda2 is certified by
    bisection on the displayed pointwise inequality over the metric table.
    """
    if kappa_plus <= 0.0:
        raise MetricError("kappa_plus must be positive")
    if R1_choice < 1.0:
        raise MetricError("R1_choice must be at least 1")
    prof = tm_half.profile
    check = prof.sample_grid()
    check = check[check >= R1_choice]
    if check.size and np.min(prof(check)) < kappa_plus - 1e-12:
        raise MetricError("profile falls below kappa_plus beyond R1_choice")
    if abs(tm_half.sigma_check - sigma0 / np.sqrt(2.0)) > 1e-12 * (1.0 + sigma0):
        raise MetricError("base metric must be built at sigma0 / sqrt(2)")

    a_bar = tm_half.lam * tm_half.C * R1_choice / (24.0 * (1.0 + sigma0 ** 2))
    qtm = QuadraticTwistedMetric(base=tm_half, a_bar=a_bar,
                                 sigma0_kappa_sq=8.0 * sigma0 ** 2 / kappa_plus,
                                 R1_bar=float(R1_choice), lambda2=0.0, C2=0.0)
    r = tm_half.r_table[tm_half.r_table > 0.0]
    lhs = (-tm_half.lam * tm_half.f(r)
           - kappa_plus * a_bar * r * qtm.f_R_prime(r)
           + 2.0 * a_bar * qtm.f_R_second(r) * sigma0 ** 2)
    f2 = qtm.f2(r)

    def holds(lam2):
        return np.all(lhs <= -lam2 * f2 + 1e-14)

    if not holds(1e-12):
        raise MetricError("no positive lambda2 certifiable on this table")
    lo, hi = 1e-12, 10.0 * tm_half.lam
    while holds(hi):
        hi *= 2.0
        if hi > 1e6:
            break
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
    lambda2 = lo
    C2 = float(np.min(f2 / r ** 2))
    return QuadraticTwistedMetric(base=tm_half, a_bar=a_bar,
                                  sigma0_kappa_sq=qtm.sigma0_kappa_sq,
                                  R1_bar=float(R1_choice),
                                  lambda2=lambda2, C2=C2)


# ---------------------------------------------------------------------------
# serialization

def save_metric(tm: TwistedMetric, csv_path, json_path=None):
    json_path = json_path or str(csv_path) + ".json"
    arr = np.column_stack([tm.r_table, tm.f_table, tm.fprime_table])
    header = {"R0": tm.R0, "R1": tm.R1, "Z": tm.Z, "lambda": tm.lam,
              "C": tm.C, "sigma_check": tm.sigma_check, "quad_tol": tm.quad_tol}
    np.savetxt(csv_path, arr, delimiter=",", header="r,f,fprime", comments="")
    with open(json_path, "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
    return csv_path, json_path


def load_metric(csv_path, json_path=None) -> TwistedMetric:
    json_path = json_path or str(csv_path) + ".json"
    arr = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    with open(json_path) as fh:
        header = json.load(fh)
    return TwistedMetric(profile=None, sigma_check=header["sigma_check"],
                         R0=header["R0"], R1=header["R1"], Z=header["Z"],
                         lam=header["lambda"], C=header["C"],
                         r_table=arr[:, 0], f_table=arr[:, 1],
                         fprime_table=arr[:, 2], quad_tol=header["quad_tol"],
                         _fi=PchipInterpolator(arr[:, 0], arr[:, 1]),
                         _fpi=PchipInterpolator(arr[:, 0], arr[:, 2]))
