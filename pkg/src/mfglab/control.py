"""Finite-horizon stochastic control in 1D: backward HJB, forward
Fokker-Planck, and the certified bound ledgers attached to their solutions.

Schemes: the HJB solver is semi-implicit (implicit diffusion through a
tridiagonal solve, explicit Hamiltonian) with second-order gradients that
switch to one-sided differences when the cell Peclet number exceeds one; the
Fokker-Planck solver is a conservative exponential-fitting finite-volume
scheme with no-flux boundaries, theta time stepping and an implicit startup.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .distances import f_norm, lip_norm, tv_grid, w1_grid, wf_grid
from .metrics import TwistedMetric
from .model import DiffusionSpec, Grid1D, RunningCostSpec, Scenario, policy


class SchemeError(RuntimeError):
    pass


class BlowUpError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# tridiagonal helper

def thomas_solve(sub, diag, sup, rhs):
    """Solve a tridiagonal system (LAPACK banded storage underneath)."""
    from scipy.linalg import solve_banded
    n = len(diag)
    ab = np.zeros((3, n))
    ab[0, 1:] = sup
    ab[1] = diag
    ab[2, :-1] = sub
    return solve_banded((1, 1), ab, rhs, check_finite=False)


class TridiagSolver:
    """Prefactored LU of a fixed tridiagonal matrix (one factorization)."""

    def __init__(self, sub, diag, sup):
        from scipy import sparse
        from scipy.sparse.linalg import splu
        n = len(diag)
        mat = sparse.diags([sub, diag, sup], offsets=(-1, 0, 1),
                           format="csc")
        self._lu = splu(mat)

    def solve(self, rhs):
        return self._lu.solve(rhs)


def gradient_second_order(phi, dx):
    """Central differences with second-order one-sided boundary stencils."""
    g = np.empty_like(phi)
    g[1:-1] = (phi[2:] - phi[:-2]) / (2.0 * dx)
    g[0] = (-3.0 * phi[0] + 4.0 * phi[1] - phi[2]) / (2.0 * dx)
    g[-1] = (3.0 * phi[-1] - 4.0 * phi[-2] + phi[-3]) / (2.0 * dx)
    return g


def upwind_gradient(phi, dx, direction):
    """Second-order one-sided differences against the transport direction."""
    g = gradient_second_order(phi, dx)
    fwd = np.empty_like(phi)
    fwd[:-2] = (-3.0 * phi[:-2] + 4.0 * phi[1:-1] - phi[2:]) / (2.0 * dx)
    fwd[-2:] = g[-2:]
    bwd = np.empty_like(phi)
    bwd[2:] = (3.0 * phi[2:] - 4.0 * phi[1:-1] + phi[:-2]) / (2.0 * dx)
    bwd[:2] = g[:2]
    return np.where(direction > 0.0, fwd, np.where(direction < 0.0, bwd, g))


def hessian_interior(phi, dx):
    h = np.empty_like(phi)
    h[1:-1] = (phi[2:] - 2.0 * phi[1:-1] + phi[:-2]) / dx ** 2
    h[0], h[-1] = h[1], h[-2]
    return h


# ---------------------------------------------------------------------------
# solution containers

@dataclass
class ValueFunction:
    times: np.ndarray
    xs: np.ndarray
    phi: np.ndarray          # (n_times, n_x)
    grad: np.ndarray         # (n_times, n_x)

    def slice_at(self, t):
        i = int(np.clip(np.searchsorted(self.times, t), 0, len(self.times) - 1))
        if i > 0 and abs(self.times[i - 1] - t) < abs(self.times[i] - t):
            i -= 1
        return i

    def grad_at(self, t):
        """Time-interpolated gradient field."""
        ts = self.times
        if t <= ts[0]:
            return self.grad[0]
        if t >= ts[-1]:
            return self.grad[-1]
        i = int(np.searchsorted(ts, t))
        w = (t - ts[i - 1]) / (ts[i] - ts[i - 1])
        return (1.0 - w) * self.grad[i - 1] + w * self.grad[i]

    def hess(self, i):
        dx = self.xs[1] - self.xs[0]
        return hessian_interior(self.phi[i], dx)


@dataclass
class MeasureFlow:
    times: np.ndarray
    xs: np.ndarray
    densities: np.ndarray    # (n_times, n_x)

    def at(self, t):
        ts = self.times
        if t <= ts[0]:
            return self.densities[0]
        if t >= ts[-1]:
            return self.densities[-1]
        i = int(np.searchsorted(ts, t))
        w = (t - ts[i - 1]) / (ts[i] - ts[i - 1])
        return (1.0 - w) * self.densities[i - 1] + w * self.densities[i]

    def mean(self):
        return np.trapezoid(self.xs[None, :] * self.densities, self.xs, axis=1)

    def variance(self):
        m = self.mean()
        return np.trapezoid((self.xs[None, :] - m[:, None]) ** 2
                            * self.densities, self.xs, axis=1)

    def moment(self, k=1):
        return np.trapezoid(np.abs(self.xs[None, :]) ** k * self.densities,
                            self.xs, axis=1)


def _store_plan(n_steps, max_slices=6001):
    stride = max(1, int(np.ceil(n_steps / (max_slices - 1))))
    idx = list(range(0, n_steps + 1, stride))
    if idx[-1] != n_steps:
        idx.append(n_steps)
    return np.array(idx, dtype=int)


# ---------------------------------------------------------------------------
# backward HJB

def solve_hjb(grid: Grid1D, T, diffusion: DiffusionSpec, drift_b: Callable,
              cost: RunningCostSpec, terminal_values, source=None,
              max_slices=6001) -> ValueFunction:
    """Backward semi-implicit solve of the value-function PDE.

    source(t, xs) is the frozen interaction term added to the running cost.
    The terminal slice equals terminal_values; boundary rows carry no
    diffusion (linear extrapolation of the value).
    """
    xs = grid.xs
    dx = grid.dx
    dt = grid.dt
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise SchemeError(f"horizon {T:g} is not a multiple of dt={dt:g}")
    sig2 = diffusion.sigma_at(xs) ** 2
    b = np.asarray(drift_b(xs), dtype=float)

    half = 0.5 * sig2 * dt / dx ** 2
    sub = np.concatenate([-half[1:-1], [0.0]])
    sup = np.concatenate([[0.0], -half[1:-1]])
    diag = np.ones_like(xs)
    diag[1:-1] += 2.0 * half[1:-1]
    solver = TridiagSolver(sub, diag, sup)

    store = _store_plan(n_steps, max_slices)
    store_set = {int(k): j for j, k in enumerate(store)}
    phi_out = np.empty((len(store), len(xs)))
    grad_out = np.empty_like(phi_out)

    phi = np.asarray(terminal_values, dtype=float).copy()
    if phi.shape != xs.shape:
        raise SchemeError("terminal slice does not match the grid")
    peclet_lim = dx / dt
    for k in range(n_steps, -1, -1):
        t = k * dt
        g = gradient_second_order(phi, dx)
        w = policy(cost, xs, g)
        a = b + w
        if np.max(np.abs(a)) > peclet_lim:
            raise SchemeError("explicit advection violates the CFL guard; "
                              "reduce dt or enlarge the box")
        if np.max(np.abs(a)) * dx > np.min(sig2):
            g = upwind_gradient(phi, dx, a)
            w = policy(cost, xs, g)
            a = b + w
        if k in store_set:
            j = store_set[k]
            phi_out[j] = phi
            grad_out[j] = g
        if k == 0:
            break
        ham = cost.L(xs, w) + a * g
        if source is not None:
            ham = ham + source(t, xs)
        rhs = phi + dt * ham
        phi = solver.solve(rhs)
        if not np.all(np.isfinite(phi)):
            raise BlowUpError(f"value function blew up at t={t - dt:g}")
        if np.max(np.abs(phi)) > 1e12:
            raise BlowUpError("value function overflow guard tripped")

    return ValueFunction(times=store * dt, xs=xs, phi=phi_out, grad=grad_out)


# ---------------------------------------------------------------------------
# forward Fokker-Planck (conservative exponential fitting)

def _cc_delta(w):
    """Exponential-fitting weight: 1/w - 1/(e^w - 1), stable near 0."""
    out = np.empty_like(w)
    small = np.abs(w) < 1e-6
    ws = w[small]
    out[small] = 0.5 - ws / 12.0
    wb = w[~small]
    wb = np.clip(wb, -500.0, 500.0)
    out[~small] = 1.0 / wb - 1.0 / np.expm1(wb)
    return out


def _cc_matrix(beta_mid, D_mid, dx):
    """Tridiagonal generator m' = A m of the no-flux finite-volume scheme."""
    w = beta_mid * dx / D_mid
    delta = _cc_delta(w)
    # flux through face i+1/2: lo * m_i + hi * m_{i+1}
    lo = beta_mid * (1.0 - delta) + D_mid / dx
    hi = beta_mid * delta - D_mid / dx
    n = len(beta_mid) + 1
    diag = np.zeros(n)
    sub = np.zeros(n - 1)
    sup = np.zeros(n - 1)
    # d m_i / dt = (J_{i-1/2} - J_{i+1/2}) / dx with J_{-1/2} = J_{n-1/2} = 0
    diag[:-1] -= lo / dx
    sup[:] -= hi / dx
    diag[1:] += hi / dx
    sub[:] += lo / dx
    return sub, diag, sup


def solve_fokker_planck(grid: Grid1D, T, diffusion: DiffusionSpec,
                        beta: Callable, mu0_density, theta=0.5,
                        rannacher=2, max_slices=6001,
                        mass_tol=1e-6) -> MeasureFlow:
    """Forward conservative solve of the marginal-flow PDE.

    beta(t, xs) is the full drift of the controlled state.  Mass is
    conserved by construction up to solver roundoff; a drift beyond
    mass_tol aborts the run.
    """
    xs = grid.xs
    dx = grid.dx
    dt = grid.dt
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise SchemeError(f"horizon {T:g} is not a multiple of dt={dt:g}")
    x_mid = 0.5 * (xs[1:] + xs[:-1])
    D_nodes = 0.5 * diffusion.sigma_at(xs) ** 2
    D_mid = 0.5 * (D_nodes[1:] + D_nodes[:-1])
    Dp_mid = (D_nodes[1:] - D_nodes[:-1]) / dx

    m = np.asarray(mu0_density, dtype=float).copy()
    m = np.maximum(m, 0.0)
    mass0 = float(np.sum(m) * dx)
    m /= mass0

    store = _store_plan(n_steps, max_slices)
    store_set = {int(k): j for j, k in enumerate(store)}
    out = np.empty((len(store), len(xs)))
    if 0 in store_set:
        out[store_set[0]] = m

    eye = np.ones_like(xs)
    for k in range(n_steps):
        t_mid = (k + 0.5) * dt
        beta_mid = np.asarray(beta(t_mid, x_mid), dtype=float) - Dp_mid
        sub, diag, sup = _cc_matrix(beta_mid, D_mid, dx)
        th = 1.0 if k < rannacher else theta
        rhs = m + (1.0 - th) * dt * _apply_tridiag(sub, diag, sup, m)
        m = thomas_solve(-th * dt * sub, eye - th * dt * diag,
                         -th * dt * sup, rhs)
        if not np.all(np.isfinite(m)):
            raise BlowUpError(f"density blew up at t={(k + 1) * dt:g}")
        if np.min(m) < -1e-9:
            raise SchemeError(f"density negativity {np.min(m):.2e} at "
                              f"t={(k + 1) * dt:g}")
        m = np.maximum(m, 0.0)
        mass = float(np.sum(m) * dx)
        if abs(mass - 1.0) > mass_tol:
            raise SchemeError(f"mass drift {mass - 1.0:.2e} exceeds "
                              f"{mass_tol:g}")
        if (k + 1) in store_set:
            out[store_set[k + 1]] = m
    return MeasureFlow(times=store * dt, xs=xs, densities=out)


def _apply_tridiag(sub, diag, sup, v):
    out = diag * v
    out[:-1] += sup * v[1:]
    out[1:] += sub * v[:-1]
    return out


def stationary_density_cc(grid: Grid1D, diffusion: DiffusionSpec, beta_fn):
    """Zero-flux stationary profile of the finite-volume scheme.

    Discrete counterpart of m ~ sigma^{-2} exp(2 integral beta / sigma^2):
    the cumulative product of the per-face equilibrium ratios, normalized.
    """
    xs = grid.xs
    dx = grid.dx
    x_mid = 0.5 * (xs[1:] + xs[:-1])
    D_nodes = 0.5 * diffusion.sigma_at(xs) ** 2
    D_mid = 0.5 * (D_nodes[1:] + D_nodes[:-1])
    Dp_mid = (D_nodes[1:] - D_nodes[:-1]) / dx
    a_mid = np.asarray(beta_fn(x_mid), dtype=float) - Dp_mid
    logw = np.concatenate([[0.0], np.cumsum(a_mid * dx / D_mid)])
    logw -= np.max(logw)
    m = np.exp(logw)
    return m / (np.sum(m) * dx)


def optimal_flow(value: ValueFunction, scenario: Scenario,
                 mu0_density, max_slices=6001) -> MeasureFlow:
    """Forward flow of the state controlled by the solved value function."""
    b = scenario.drift.b
    cost = scenario.running_cost

    def beta(t, x):
        g = np.interp(x, value.xs, value.grad_at(t))
        return np.asarray(b(x), dtype=float) + policy(cost, x, g)

    T = float(value.times[-1])
    return solve_fokker_planck(scenario.grid, T, scenario.diffusion, beta,
                               mu0_density, max_slices=max_slices)


# ---------------------------------------------------------------------------
# distance wrappers on the control grid

def w1_distance(dens1, dens2, grid: Grid1D):
    return w1_grid(grid.xs, dens1, dens2)


def tv_distance(dens1, dens2, grid: Grid1D):
    return tv_grid(grid.xs, dens1, dens2)


def wf_distance(dens1, dens2, grid: Grid1D, tm: TwistedMetric, n_atoms=128):
    return wf_grid(grid.xs, dens1, dens2, tm.f, n_atoms=n_atoms)


# ---------------------------------------------------------------------------
# bound ledgers

@dataclass
class BoundLedger:
    kind: str
    times: np.ndarray
    measured: np.ndarray
    theoretical: np.ndarray
    window: np.ndarray            # bool: where the bound is asserted
    extras: dict = field(default_factory=dict)

    @property
    def passes(self):
        ok = (self.measured <= self.theoretical * (1.0 + 1e-9) + 1e-12)
        return bool(np.all(ok[self.window])) if np.any(self.window) else True

    def rows(self):
        return [{"t": float(t), "measured": float(m), "theoretical": float(b),
                 "in_window": bool(w),
                 "pass": bool((m <= b * (1.0 + 1e-9) + 1e-12) or not w)}
                for t, m, b, w in zip(self.times, self.measured,
                                      self.theoretical, self.window)]

    def as_dict(self):
        return {"kind": self.kind, "passes": self.passes, "rows": self.rows(),
                **{k: v for k, v in self.extras.items()
                   if isinstance(v, (int, float, str, bool))}}


def _ledger_times(value: ValueFunction, n=9):
    idx = np.unique(np.linspace(0, len(value.times) - 1, n).astype(int))
    return value.times[idx], idx


def value_fnorm(value: ValueFunction, i, f):
    """Measured twisted seminorm of a value slice.

    The stride-pair estimator misses suprema attained at the box edge, so it
    is combined with the gradient bound (f'(0) = 1 makes sup|grad| a valid
    lower estimate of the same seminorm).
    """
    pair = f_norm(value.xs, value.phi[i], f)
    return max(pair, float(np.max(np.abs(value.grad[i]))))


def theoretical_value_fnorm(t, T, tm_b: TwistedMetric, C_x_ell, g_fnorm,
                            g_sup=None, C_osc_ell=None):
    """Certified bound for the twisted seminorm of the value at time t.

    Combines the Lipschitz-cost route (exponential), the bounded-terminal
    route (kernel factor, only meaningful for T - t past the kernel knee)
    and the oscillation-cost route when those constants exist; the smallest
    applicable bound is returned.
    """
    from .metrics import q_integral, q_kernel
    lam, C = tm_b.lam, tm_b.C
    tau = T - t
    candidates = []
    if C_x_ell is not None and g_fnorm is not None:
        candidates.append(C_x_ell / (C * lam) * (1.0 - np.exp(-lam * tau))
                          + g_fnorm * np.exp(-lam * tau))
    if C_osc_ell is not None and g_fnorm is not None:
        candidates.append(2.0 * C_osc_ell
                          * q_integral(C, lam, tm_b.sigma_check, tau)
                          + g_fnorm * np.exp(-lam * tau))
    if g_sup is not None and tau >= 1.0 / (2.0 * lam) and C_x_ell is not None:
        candidates.append(C_x_ell / (C * lam) * (1.0 - np.exp(-lam * tau))
                          + g_sup * q_kernel(C, lam, tm_b.sigma_check, tau))
    return min(candidates) if candidates else np.inf


def lipschitz_ledger(value: ValueFunction, scenario: Scenario,
                     tm_b: TwistedMetric, n_times=9) -> BoundLedger:
    """Value-seminorm and control-magnitude bounds against measurements."""
    cost, inter, term = (scenario.running_cost, scenario.interaction,
                         scenario.terminal_cost)
    C_x_ell = None if cost.C_x_L is None else cost.C_x_L + inter.C_x_F
    C_osc = None
    if cost.C_L_osc is not None and inter.C_F is not None:
        C_osc = cost.C_L_osc + inter.C_F
    T = float(value.times[-1])
    g_vals = value.phi[-1]
    g_fnorm = value_fnorm(value, -1, tm_b.f)
    g_sup = float(np.max(np.abs(g_vals))) if term.C_G is not None else None

    times, idx = _ledger_times(value, n_times)
    measured = np.array([value_fnorm(value, i, tm_b.f) for i in idx])
    theo = np.array([theoretical_value_fnorm(t, T, tm_b, C_x_ell, g_fnorm,
                                             g_sup, C_osc) for t in times])
    window = np.isfinite(theo)
    w_meas = np.array([float(np.max(np.abs(policy(cost, value.xs,
                                                  value.grad[i]))))
                       for i in idx])
    w_theo = (theo + cost.C_u_L0) / cost.rho_uu
    led = BoundLedger(kind="value_fnorm", times=times, measured=measured,
                      theoretical=theo, window=window)
    led.extras["control"] = BoundLedger(kind="control_sup", times=times,
                                        measured=w_meas, theoretical=w_theo,
                                        window=window)
    led.extras["g_fnorm"] = g_fnorm
    return led


def hessian_ledger(value: ValueFunction, scenario: Scenario,
                   tm_b: TwistedMetric, n_times=9) -> BoundLedger:
    """Second-derivative bounds along the solve (constant diffusion only)."""
    from .metrics import q_kernel, q_weighted_integral
    from .profiles import shift_profile
    from .model import _build_extending
    cost, inter, term, drift = (scenario.running_cost, scenario.interaction,
                                scenario.terminal_cost, scenario.drift)
    T = float(value.times[-1])
    times, idx = _ledger_times(value, n_times)
    interior = slice(2, -2)
    measured = np.array([float(np.max(np.abs(value.hess(i)[interior])))
                         for i in idx])

    if not scenario.diffusion.is_constant:
        theo = np.full_like(measured, np.inf)
        led = BoundLedger(kind="value_hessian", times=times,
                          measured=measured, theoretical=theo,
                          window=np.zeros_like(times, dtype=bool))
        led.extras["note"] = "empirical only: non-constant diffusion"
        return led
    if drift.C_x_b is None or term.C_xx_G is None:
        raise SchemeError("hessian ledger needs declared C_x_b and C_xx_G")

    C_x_ell = (cost.C_x_L or 0.0) + inter.C_x_F
    g_vals = value.phi[-1]
    g_fnorm = value_fnorm(value, -1, tm_b.f)

    def C_x_phi(s):
        return theoretical_value_fnorm(s, T, tm_b, C_x_ell, g_fnorm)

    C_u_sup = (C_x_phi(0.0) + cost.C_u_L0) / cost.rho_uu
    kappa_bar = shift_profile(drift.profile, C_u_sup, "grad",
                              name=f"{drift.profile.name}-hessbar")
    if not kappa_bar.certification.is_K:
        tm_bar = None
    else:
        try:
            _, tm_bar = _build_extending(kappa_bar, scenario.diffusion.sigma0)
        except Exception:
            tm_bar = None

    C_x_g = term.C_x_G if term.C_x_G is not None else f_norm(
        value.xs, g_vals, lambda r: r)
    C_xx_g = term.C_xx_G
    theo = np.empty_like(measured)
    window = np.zeros_like(times, dtype=bool)
    for j, t in enumerate(times):
        cands = []
        if tm_bar is not None and not tm_bar.degenerate and tm_bar.lam > 0.0:
            lamb, Cb = tm_bar.lam, tm_bar.C
            s0 = tm_bar.sigma_check
            integral = q_weighted_integral(
                Cb, lamb, s0, t, T,
                lambda s: 2.0 * (drift.C_x_b * C_x_phi(s) + C_x_ell))
            tau = T - t
            term_opts = [C_xx_g / Cb * np.exp(-lamb * tau)] if Cb > 0 else []
            if tau >= 1.0 / (2.0 * lamb):
                term_opts.append(2.0 * C_x_g * q_kernel(Cb, lamb, s0, tau))
            cands.append(integral + min(term_opts))
            if drift.rho_b is not None and tau > 0.0:
                rb = drift.rho_b
                integral2 = q_weighted_integral(
                    Cb, lamb, s0, t, T,
                    lambda s: 2.0 * np.exp(-rb * (s - t))
                    * (drift.C_x_b * C_x_phi(s) + C_x_ell))
                if tau >= 1.0 / (2.0 * lamb):
                    cands.append(integral2 + C_x_g * np.exp(-rb * tau)
                                 * q_kernel(Cb, lamb, s0, tau))
        theo[j] = min(cands) if cands else np.inf
        window[j] = np.isfinite(theo[j])
    led = BoundLedger(kind="value_hessian", times=times, measured=measured,
                      theoretical=theo, window=window)
    led.extras["C_u_sup"] = C_u_sup
    led.extras["lam_bar"] = 0.0 if tm_bar is None else tm_bar.lam
    return led


def stability_ledger(value: ValueFunction, value_hat: ValueFunction,
                     scenario: Scenario, tm_tilde: TwistedMetric,
                     deltas: dict, flow: Optional[MeasureFlow] = None,
                     flow_hat: Optional[MeasureFlow] = None,
                     n_times=9) -> BoundLedger:
    """Bounds on the gap between two solved problems sharing the diffusion.

    deltas carries the declared perturbation constants: C_x_delta_l and
    C_x_delta_g for state-only cost gaps, or C_delta_l / C_delta_b /
    C_u_delta_l / plus a terminal gap for bounded perturbations.
    """
    from .metrics import q_weighted_integral
    cost = scenario.running_cost
    lam, C = tm_tilde.lam, tm_tilde.C
    T = float(value.times[-1])
    times, idx = _ledger_times(value, n_times)

    mode = "A13" if "C_x_delta_l" in deltas else "A14"
    g_gap = f_norm(value.xs, value.phi[-1] - value_hat.phi[-1], tm_tilde.f)

    def delta_phi_bound(t):
        tau = T - t
        if mode == "A13":
            return (deltas["C_x_delta_l"] / (C * lam)
                    * (1.0 - np.exp(-lam * tau))
                    + deltas.get("C_x_delta_g", g_gap) / C
                    * np.exp(-lam * tau))
        amp = deltas.get("C_delta_l", 0.0)
        bmp = deltas.get("C_delta_b", 0.0)
        # worst case uses the certified value-seminorm level of the perturbed
        # problem, passed in by the caller
        c_phi = deltas.get("C_x_phi_hat", 0.0)
        return (2.0 * q_weighted_integral(
            C, lam, tm_tilde.sigma_check, t, T,
            lambda s: amp + bmp * c_phi)
            + g_gap * np.exp(-lam * tau))

    measured_lip = np.array([lip_norm(value.xs,
                                      value.phi[i] - value_hat.phi[i])
                             for i in idx])
    measured_f = np.array([f_norm(value.xs, value.phi[i] - value_hat.phi[i],
                                  tm_tilde.f) for i in idx])
    theo = np.array([delta_phi_bound(t) for t in times])
    window = np.isfinite(theo)
    led = BoundLedger(kind="value_gap", times=times, measured=measured_f,
                      theoretical=theo, window=window)
    led.extras["measured_lip"] = measured_lip
    led.extras["g_gap_fnorm"] = g_gap

    # control gap constants and flow bounds of the perturbed dynamics
    def delta_u(s):
        if mode == "A13":
            return delta_phi_bound(s) / cost.rho_uu
        return deltas.get("C_delta_b", 0.0) \
            + (1.0 + deltas.get("C_u_delta_l", 0.0)) * delta_phi_bound(s) \
            / cost.rho_uu

    led.extras["delta_u"] = delta_u
    if flow is not None and flow_hat is not None:
        from .distances import wf_grid
        w0 = wf_grid(flow.xs, flow.densities[0], flow_hat.densities[0],
                     tm_tilde.f)
        wf_meas, wf_theo, tv_meas, tv_theo = [], [], [], []
        for t in times:
            p, q = flow.at(t), flow_hat.at(t)
            wf_meas.append(wf_grid(flow.xs, p, q, tm_tilde.f, n_atoms=96))
            ss = np.linspace(0.0, t, 129)
            du = np.array([delta_u(s) for s in ss])
            conv = np.trapezoid(np.exp(-lam * (t - ss)) * du, ss) if t > 0 \
                else 0.0
            wf_theo.append(np.exp(-lam * t) * w0 + conv)
            tv_meas.append(tv_grid(flow.xs, p, q, check=False))
            t0 = max(0.0, t - 1.0 / (2.0 * lam))
            if t > t0:
                ss0 = np.linspace(0.0, t0, 129)
                du0 = np.array([delta_u(s) for s in ss0])
                conv0 = np.trapezoid(np.exp(-lam * (t0 - ss0)) * du0, ss0) \
                    if t0 > 0 else 0.0
                girsanov = np.sqrt(np.trapezoid(
                    np.array([delta_u(s) ** 2 for s in np.linspace(t0, t, 65)]),
                    np.linspace(t0, t, 65)) / 2.0)
                from .metrics import q_kernel
                tv_theo.append(q_kernel(C, lam, tm_tilde.sigma_check, t - t0)
                               * (np.exp(-lam * t0) * w0 + conv0) + girsanov)
            else:
                tv_theo.append(np.inf)
        led.extras["flow_wf"] = BoundLedger(
            kind="flow_wf_gap", times=times, measured=np.array(wf_meas),
            theoretical=np.array(wf_theo), window=np.ones_like(window))
        led.extras["flow_tv"] = BoundLedger(
            kind="flow_tv_gap", times=times, measured=np.array(tv_meas),
            theoretical=np.array(tv_theo),
            window=np.isfinite(np.array(tv_theo)))
    return led


# ---------------------------------------------------------------------------
# discrete costate residual along the optimal flow

def pontryagin_residual(value: ValueFunction, scenario: Scenario,
                        n_paths=2000, deltas=(0.02, 0.01), seed=77,
                        source_grad=None):
    """Mean-square residual of the discrete costate recursion per step size.

    Simulates the optimally controlled state, reads the costate and its
    curvature off the solved value function, and measures how far the
    backward recursion is from closing.  The root-mean-square residual must
    scale linearly with the step, so halving the step should roughly halve
    it (ratio in [1.5, 3]).
    """
    xs = value.xs
    dx = xs[1] - xs[0]
    cost, drift, diff = scenario.running_cost, scenario.drift, scenario.diffusion
    T = float(value.times[-1])
    eps = 1e-5

    def dbdx(x):
        return (drift.b(x + eps) - drift.b(x - eps)) / (2.0 * eps)

    def dldx(x, u):
        base = (cost.L(x + eps, u) - cost.L(x - eps, u)) / (2.0 * eps)
        if source_grad is not None:
            base = base + source_grad(x)
        return base

    def dsdx(x):
        return (diff.sigma_at(x + eps) - diff.sigma_at(x - eps)) / (2.0 * eps)

    out = {}
    for delta in deltas:
        n_steps = int(round(T / delta))
        rng = np.random.default_rng(seed)
        x = scenario.mu0.sample(n_paths, rng)
        sq_sum, count = 0.0, 0
        for k in range(n_steps):
            t = k * delta
            g_slice = value.grad_at(t)
            y = np.interp(x, xs, g_slice)
            h_slice = hessian_interior(
                value.phi[value.slice_at(t)], dx)
            z = np.interp(x, xs, h_slice)
            w = policy(cost, x, y)
            sig = diff.sigma_at(x)
            db = rng.standard_normal(n_paths) * np.sqrt(delta)
            x_next = x + (drift.b(x) + w) * delta + sig * db
            x_next = np.clip(x_next, xs[0], xs[-1])
            y_next = np.interp(x_next, xs, value.grad_at(t + delta))
            dxh = dbdx(x) * y + dldx(x, w)
            tr = dsdx(x) * z * sig
            resid = y_next - y + (dxh + tr) * delta - z * sig * db
            sq_sum += float(np.sum(resid ** 2))
            count += n_paths
            x = x_next
        out[delta] = np.sqrt(sq_sum / count)
    rms = [out[d] for d in deltas]
    # degenerate problems close the recursion to roundoff: no ratio to take
    ratios = [rms[i] / rms[i + 1] for i in range(len(rms) - 1)
              if rms[i + 1] > 1e-13]
    return {"rms": out, "ratios": ratios}


# ---------------------------------------------------------------------------
# domain truncation audit

def box_doubling_check(scenario: Scenario, terminal_fn, inner_tol=1e-4):
    """Re-solve on a doubled box and compare on the inner half.

    The truncation boundary is artificial; the certified statement lives on
    the whole line, so the box must be demonstrably wide enough.  Returns
    the sup difference of the two value solves on the original inner half
    and whether it stays below inner_tol.
    """
    g1 = scenario.grid
    xs1 = g1.xs
    v1 = solve_hjb(g1, scenario.T, scenario.diffusion, scenario.drift.b,
                   scenario.running_cost, terminal_fn(xs1))
    span = g1.x_max - g1.x_min
    center = 0.5 * (g1.x_max + g1.x_min)
    g2 = Grid1D(center - span, center + span, 2 * g1.n_x - 1, g1.dt)
    xs2 = g2.xs
    v2 = solve_hjb(g2, scenario.T, scenario.diffusion, scenario.drift.b,
                   scenario.running_cost, terminal_fn(xs2))
    inner = np.abs(xs1 - center) <= 0.25 * span
    worst = 0.0
    for i in np.linspace(0, len(v1.times) - 1, 5).astype(int):
        j = v2.slice_at(v1.times[i])
        interp = np.interp(xs1[inner], xs2, v2.phi[j])
        # compare up to a spatial constant: the level is pinned by terminal
        # data, gradients are what the bounds consume
        diff = v1.phi[i][inner] - interp
        worst = max(worst, float(np.max(np.abs(diff - np.mean(diff)))))
    return {"sup_inner_diff": worst, "pass": bool(worst <= inner_tol)}
