"""Monotonicity profiles of drift fields and their class-K certification.

A profile maps a separation radius r to the worst-case one-sided contraction
rate of the drift at that separation, corrected by the Frobenius mismatch of
the reduced diffusion factor.  Profiles are the single input to the twisted
metric construction in :mod:`mfglab.metrics`; everything downstream (rates,
kernels, smallness conditions) is a functional of a profile.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._quad import adaptive_simpson


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class KReport:
    """Outcome of a class-K certification run."""
    integral: float          # integral over (0, 1] of r * negative-part(kappa)
    floor: float             # min of kappa on the tail window [r_max/4, r_max]
    is_K: bool

    def as_dict(self):
        return {"integral": self.integral, "floor": self.floor, "is_K": self.is_K}


@dataclass(frozen=True)
class MonotonicityProfile:
    """r -> kappa(r) with certification data.

    fn must be vectorized over numpy arrays of radii.  lower_bound and
    asymptotic_floor are sampled quantities, not proofs; the sampling grid is
    log-spaced on [r_min, r_max] plus a linear refinement.
    """
    fn: Callable[[np.ndarray], np.ndarray]
    r_min: float
    r_max: float
    lower_bound: float
    asymptotic_floor: float
    integrability_integral: float
    name: str = "profile"
    certification: Optional[KReport] = None

    def __call__(self, r):
        r_arr = np.asarray(r, dtype=float)
        out = np.asarray(self.fn(r_arr), dtype=float)
        if not np.all(np.isfinite(out)):
            raise ProfileError(f"profile {self.name!r} non-finite at some radii")
        return out if np.ndim(r) else float(out)

    def sample_grid(self, n=2048):
        """Dense radius grid used for tail infima and invariant checks."""
        lo = max(self.r_min, 1e-9 * self.r_max)
        geo = np.geomspace(lo, self.r_max, n // 2)
        lin = np.linspace(lo, self.r_max, n - n // 2)
        return np.unique(np.concatenate([geo, lin]))

    def tail_inf(self, r_lo):
        """min of kappa over [r_lo, r_max], capped by the asserted floor."""
        grid = self.sample_grid()
        grid = grid[grid >= r_lo]
        vals = [self.asymptotic_floor]
        if grid.size:
            vals.append(float(np.min(self(grid))))
        return float(min(vals))

    def negative_part_at(self, r):
        v = self(np.maximum(np.asarray(r, dtype=float), 1e-300))
        return np.maximum(-v, 0.0)


def _certify(fn, r_min, r_max, quad_tol=1e-10):
    def integrand(s):
        s = max(s, 1e-14 * r_max)
        v = float(fn(np.asarray([s]))[0])
        if not np.isfinite(v):
            raise ProfileError("profile evaluates to a non-finite value")
        return s * max(-v, 0.0)

    integral = adaptive_simpson(integrand, 0.0, min(1.0, r_max), tol=quad_tol)
    tail = np.linspace(r_max / 4.0, r_max, 512)
    vals = np.asarray(fn(tail), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ProfileError("profile evaluates to a non-finite value on the tail")
    floor = float(np.min(vals))
    return KReport(integral=integral, floor=floor,
                   is_K=bool(np.isfinite(integral) and floor > 0.0))


def make_profile(fn, r_min=1e-6, r_max=50.0, name="profile", quad_tol=1e-10):
    """Build a profile from a vectorized callable and certify it."""
    report = _certify(fn, r_min, r_max, quad_tol)
    grid = np.unique(np.concatenate([
        np.geomspace(max(r_min, 1e-9 * r_max), r_max, 1024),
        np.linspace(max(r_min, 1e-9 * r_max), r_max, 1024)]))
    vals = np.asarray(fn(grid), dtype=float)
    return MonotonicityProfile(
        fn=fn, r_min=r_min, r_max=r_max,
        lower_bound=float(np.min(vals)),
        asymptotic_floor=report.floor,
        integrability_integral=report.integral,
        name=name, certification=report)


def certify_class_K(profile: MonotonicityProfile, quad_tol=1e-10) -> KReport:
    """Re-run the class-K certification of an existing profile."""
    return _certify(profile.fn, profile.r_min, profile.r_max, quad_tol)


# ---------------------------------------------------------------------------
# catalog profiles

def constant_profile(value, r_max=50.0, name=None):
    v = float(value)
    return make_profile(lambda r: np.full_like(np.asarray(r, dtype=float), v),
                        r_max=r_max, name=name or f"const({v:g})")


def double_well_profile(r_max=50.0, r_floor=1e-3):
    """Exact 1D profile of the drift x - x^3 with constant diffusion.

    The infimum over pairs at separation r of the one-sided rate is attained
    at the midpoint pair and equals r^2/4 - 1; the evaluation radius is
    floored to keep the closed form away from r = 0 exactly as tabulated.
    """
    def fn(r):
        rr = np.maximum(np.asarray(r, dtype=float), r_floor)
        return rr * rr / 4.0 - 1.0
    return make_profile(fn, r_max=r_max, name="double_well")


# ---------------------------------------------------------------------------
# profiles measured from a drift field

def profile_of_drift(drift, diffusion, radius_grid, pair_sampler=None,
                     box=(-8.0, 8.0), n_scan=4001, n_pairs=4096, seed=0,
                     name="measured"):
    """Estimate the monotonicity profile of a drift with respect to a diffusion.

    drift: vectorized map from points (n, d) or (n,) to drift values.
    In 1D with constant diffusion the pair set {(x, x + r)} is scanned on a
    dense grid, which is exact up to grid resolution.  In higher dimension
    random pairs at distance r are sampled and the estimated infimum is
    deflated by 10% to stay conservative.
    """
    dim = getattr(diffusion, "dim", 1)
    radius_grid = np.asarray(radius_grid, dtype=float)
    if radius_grid.size == 0:
        raise ProfileError("empty radius grid")

    if dim == 1 and getattr(diffusion, "is_constant", False) and pair_sampler is None:
        xs = np.linspace(box[0], box[1], n_scan)
        bx = np.asarray(drift(xs), dtype=float)

        def fn(r):
            r_arr = np.atleast_1d(np.asarray(r, dtype=float))
            out = np.empty_like(r_arr)
            for i, ri in enumerate(r_arr):
                ri = max(ri, 1e-12)
                bxr = np.asarray(drift(xs + ri), dtype=float)
                out[i] = np.min((bx - bxr) / ri)
            return out.reshape(np.shape(r))
    else:
        rng = np.random.default_rng(seed)
        if pair_sampler is None:
            def pair_sampler(r, n):
                x = rng.uniform(box[0], box[1], size=(n, dim))
                u = rng.normal(size=(n, dim))
                u /= np.linalg.norm(u, axis=1, keepdims=True)
                return x, x + r * u
        sampled = {}

        def fn(r):
            r_arr = np.atleast_1d(np.asarray(r, dtype=float))
            out = np.empty_like(r_arr)
            for i, ri in enumerate(r_arr):
                ri = max(ri, 1e-12)
                key = round(float(ri), 12)
                if key not in sampled:
                    x, xh = pair_sampler(ri, n_pairs)
                    if len(x) == 0:
                        raise ProfileError("pair sampler returned no pairs")
                    bx, bxh = np.asarray(drift(x)), np.asarray(drift(xh))
                    d = x - xh
                    val = -np.sum((bx - bxh) * d, axis=1) / ri ** 2
                    sb = diffusion.sigma_bar_at(x) - diffusion.sigma_bar_at(xh)
                    val -= np.sum(sb * sb, axis=(1, 2)) / (2.0 * ri ** 2)
                    m = float(np.min(val))
                    sampled[key] = m - 0.1 * abs(m)
                out[i] = sampled[key]
            return out.reshape(np.shape(r))

    r_max = float(radius_grid.max())
    r_min = float(max(radius_grid.min(), 1e-6))
    return make_profile(fn, r_min=r_min, r_max=r_max, name=name)


# ---------------------------------------------------------------------------
# shifted profiles

def shift_profile(profile: MonotonicityProfile, c_u, mode="grad",
                  name=None) -> MonotonicityProfile:
    """Profile of the drift perturbed by a bounded control of size c_u.

    mode "grad":  kappa(r) - 2*c_u / r        (bounded control)
    mode "hess":  kappa(r) - 2*min(c_u/r, c_u) (Lipschitz control)
    The result is re-certified; downstream smallness checks inspect the new
    certification instead of this function raising.
    """
    c_u = float(c_u)
    if c_u < 0.0:
        raise ProfileError("shift constant must be nonnegative")
    base = profile.fn
    if mode == "grad":
        def fn(r):
            r_arr = np.maximum(np.asarray(r, dtype=float), 1e-300)
            return np.asarray(base(r_arr), dtype=float) - 2.0 * c_u / r_arr
    elif mode == "hess":
        def fn(r):
            r_arr = np.maximum(np.asarray(r, dtype=float), 1e-300)
            return (np.asarray(base(r_arr), dtype=float)
                    - 2.0 * np.minimum(c_u / r_arr, c_u))
    else:
        raise ProfileError(f"unknown shift mode {mode!r}")
    if c_u == 0.0:
        fn = base
    return make_profile(fn, r_min=profile.r_min, r_max=profile.r_max,
                        name=name or f"{profile.name}-shift({c_u:g},{mode})")
