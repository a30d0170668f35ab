"""Energy and Lyapunov functionals, boundary traces, and decay-rate fitting.

All space integrals share the composite trapezoid rule of
:func:`kkpdelay.grid.integral`. Delay integrals over rho in (0, 1) use, by
default, the cell-midpoint rule on the history slices: each cell
[rho_k, rho_{k+1}] contributes (1/n_rho) * phi(rho_{k+1/2}) * ((z_k + z_{k+1})/2)^2.
Combined with the Crank-Nicolson step this makes the discrete energy balance
exact; ``rho_quadrature="trapezoid"`` is available as well.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from kkpdelay.delay import DelayLine
from kkpdelay.grid import Grid, antideriv_x, boundary_derivative_weights, diff, integral
from kkpdelay.model import Model, SimState

TRACE_COLUMNS = (
    "t", "E", "V1", "V2", "V", "trace_xx0", "trace_invy0",
    "damp_now", "damp_delayed", "diss_residual",
)


def rho_integral(dl: DelayLine, weight: np.ndarray, grid: Grid, rule: str = "midpoint", rho_factor=None) -> float:
    """int_0^1 phi(rho) int int weight * z^2 dx dy drho over the stored slices.

    ``rho_factor`` is an optional callable phi(rho) (default 1).
    """
    z = dl.slices()
    n = dl.n_rho
    if rule == "midpoint":
        rho = (np.arange(n) + 0.5) / n
        vals = 0.5 * (z[:-1] + z[1:])
        wts = np.full(n, 1.0 / n)
    elif rule == "trapezoid":
        rho = np.arange(n + 1) / n
        vals = z
        wts = np.full(n + 1, 1.0 / n)
        wts[[0, -1]] *= 0.5
    else:
        raise ValueError(f"unknown rho quadrature {rule!r}")
    if rho_factor is not None:
        wts = wts * np.asarray(rho_factor(rho), dtype=float)
    total = 0.0
    for k in range(len(wts)):
        if wts[k] != 0.0:
            total += wts[k] * integral(weight * vals[k] * vals[k], grid)
    return total


def energy(state: SimState, model: Model) -> float:
    """Mode-appropriate energy: (1/2) int u^2 + int int int w z^2 (see :mod:`kkpdelay.model`)."""
    g = model.grid
    e_u = 0.5 * integral(state.u * state.u, g)
    if not np.any(model.delay_weight):
        return e_u
    return e_u + rho_integral(state.delay, model.delay_weight, g, model.config.rho_quadrature)


def lyapunov_v1(state: SimState, model: Model) -> float:
    """int int x u^2."""
    g = model.grid
    return integral(g.X * state.u * state.u, g)


def lyapunov_v2(state: SimState, model: Model) -> float:
    """Delay part weighted by (1 - rho): (h/2) int(1-rho) b z^2 (perturbed), (xi/2) int(1-rho) a z^2 (mu)."""
    if not np.any(model.v2_weight):
        return 0.0
    return rho_integral(state.delay, model.v2_weight, model.grid, model.config.rho_quadrature, lambda r: 1.0 - r)


def lyapunov_total(state: SimState, model: Model, eta: float, sigma: float) -> float:
    if eta < 0 or sigma < 0:
        raise ValueError("eta and sigma must be nonnegative")
    return energy(state, model) + eta * lyapunov_v1(state, model) + sigma * lyapunov_v2(state, model)


def sandwich_kappa(model: Model, eta: float, sigma: float) -> float:
    """Constant kappa in E <= V <= kappa E for the model's mode."""
    L = model.params.length
    if model.params.mode == "perturbed":
        return 1.0 + max(2 * eta * L, sigma / model.xi_eff)
    return 1.0 + max(2 * eta * L, sigma)


@dataclass(frozen=True)
class SandwichResult:
    E: float
    V: float
    kappa_E: float
    passed: bool


def sandwich_check(state: SimState, model: Model, eta: float, sigma: float, rtol: float = 1e-12) -> SandwichResult:
    E = energy(state, model)
    V = lyapunov_total(state, model, eta, sigma)
    kE = sandwich_kappa(model, eta, sigma) * E
    tol = rtol * max(abs(kE), np.finfo(float).tiny)
    ok = (E <= V + tol) and (V <= kE + tol)
    return SandwichResult(E, V, kE, bool(ok))


# ----------------------------------------------------------------------------
# boundary traces

def boundary_traces(u: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """(u_xx(0, y_j) on y-nodes, d_y d_x^{-1} u(0, y) on y-cell midpoints).

    u_xx(0, y) is the second derivative at x = 0 of the boundary-closure
    polynomial (uses u(0) = u_x(0) = 0 and five interior values). The second
    trace differences psi(0, y) = -int_0^L u dx between neighbouring y-nodes.
    """
    w = boundary_derivative_weights(grid.dx, 2)["left"]
    trace_xx = w @ u[: len(w)]
    psi0 = antideriv_x(u, grid)[0]
    trace_inv = np.diff(psi0) / grid.dy
    return trace_xx, trace_inv


def boundary_trace_norms(u: np.ndarray, grid: Grid) -> tuple[float, float]:
    """(int (u_xx(0,y))^2 dy, int (d_x^{-1} u_y(0,y))^2 dy)."""
    txx, tinv = boundary_traces(u, grid)
    _, wy = grid.trapezoid_weights()
    return float(wy @ (txx * txx)), float(grid.dy * np.sum(tinv * tinv))


def energy_rate_identity(u_mid: np.ndarray, z1_mid: np.ndarray, model: Model) -> float:
    """Right-hand side of the linear energy balance evaluated at (u, z(1)).

    beta/2 int u_xx(0)^2 - gamma/2 int (d_x^{-1}u_y(0))^2 - int c u^2 - int d u z1
        + (1/h) int w (u^2 - z1^2)
    which reproduces, per mode, the identity underlying the dissipation
    inequality before any Cauchy-Schwarz step.
    """
    p, g = model.params, model.grid
    txx, tinv = boundary_trace_norms(u_mid, g)
    rhs = 0.5 * p.beta * txx - 0.5 * p.gamma * tinv
    rhs -= integral(model.reaction * u_mid * u_mid, g)
    rhs -= integral(model.delay_coef * u_mid * z1_mid, g)
    rhs += integral(model.delay_weight * (u_mid * u_mid - z1_mid * z1_mid), g) / p.delay
    return rhs


def dissipation_residual(state_n: SimState, state_np1: SimState, model: Model) -> float:
    """(E^{n+1} - E^n)/dt minus the energy balance at the step midpoint.

    Meaningful for linear runs; in nonlinear mode the cubic flux term is not
    part of the identity (value still returned).
    """
    dt = state_np1.t - state_n.t
    if dt <= 0:
        raise ValueError("states must be consecutive with increasing time")
    return midpoint_residual(
        energy(state_n, model), energy(state_np1, model), dt,
        state_n.u, state_np1.u, state_n.delay.sample(1.0), state_np1.delay.sample(1.0), model,
    )


def midpoint_residual(e_n, e_np1, dt, u_n, u_np1, z1_n, z1_np1, model: Model) -> float:
    """Same as :func:`dissipation_residual` from already computed pieces."""
    u_mid = 0.5 * (u_n + u_np1)
    z_mid = 0.5 * (z1_n + z1_np1)
    return (e_np1 - e_n) / dt - energy_rate_identity(u_mid, z_mid, model)


# ----------------------------------------------------------------------------
# trace recording

@dataclass
class EnergyTrace:
    eta: float = 0.0
    sigma: float = 0.0
    rows: list[tuple[float, ...]] = field(default_factory=list)
    # time integrals accumulated by the stepper (midpoint rule in t, fields averaged over each step)
    int_ux2: float = 0.0
    int_uxx2: float = 0.0
    int_trace_xx: float = 0.0
    int_trace_inv: float = 0.0
    int_damp_now: float = 0.0
    int_damp_delayed: float = 0.0
    h_norm0: float = 0.0

    def column(self, name: str) -> np.ndarray:
        k = TRACE_COLUMNS.index(name)
        return np.array([r[k] for r in self.rows])

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    @property
    def E(self) -> np.ndarray:
        return self.column("E")

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                w.writerow([f"{v:.17g}" for v in r])


def record_row(state: SimState, model: Model, eta: float, sigma: float, residual: float = float("nan")) -> tuple[float, ...]:
    g = model.grid
    E = energy(state, model)
    v1 = lyapunov_v1(state, model)
    v2 = lyapunov_v2(state, model)
    txx, tinv = boundary_trace_norms(state.u, g)
    w = model.feedback_weight
    z1 = state.delay.sample(1.0)
    damp_now = integral(w * state.u * state.u, g)
    damp_delayed = integral(w * z1 * z1, g)
    return (state.t, E, v1, v2, E + eta * v1 + sigma * v2, txx, tinv, damp_now, damp_delayed, residual)


def h_norm_sq(u: np.ndarray, dl: DelayLine, model: Model) -> float:
    """||(u, z)||_H^2 = int u^2 + xi ||w||_inf int_0^1 int int z^2 (w the feedback weight)."""
    g = model.grid
    w_sup = float(np.max(model.feedback_weight)) if model.feedback_weight.size else 0.0
    ones = np.ones(g.shape)
    return integral(u * u, g) + model.xi_eff * w_sup * rho_integral(dl, ones, g, model.config.rho_quadrature)


def sobolev_x_integrands(u: np.ndarray, grid: Grid) -> tuple[float, float]:
    """(int int u_x^2, int int u_xx^2) at one instant."""
    ux = diff(u, grid, "x", 1)
    uxx = diff(u, grid, "x", 2)
    return integral(ux * ux, grid), integral(uxx * uxx, grid)


# ----------------------------------------------------------------------------
# post-processing

@dataclass(frozen=True)
class DecayFit:
    rate: float
    offset: float
    quality: float


def fit_decay_rate(t, E, skip: float = 0.1, window: tuple[float, float] | None = None) -> DecayFit:
    """Least-squares line through log E(t); E ~ exp(offset) * exp(-rate t).

    The first ``skip`` fraction of the horizon is dropped unless an explicit
    ``window=(t0, t1)`` is given. ``quality`` is the coefficient of
    determination (1 for an exact exponential, also reported as 1 for a flat trace).
    """
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    if window is None:
        t0 = t[0] + skip * (t[-1] - t[0])
        mask = t >= t0 - 1e-12
    else:
        mask = (t >= window[0]) & (t <= window[1])
    tw, Ew = t[mask], E[mask]
    if tw.size < 2:
        raise ValueError("fit window holds fewer than two samples")
    if np.any(Ew <= 0):
        raise ValueError("energies in the fit window must be positive")
    logE = np.log(Ew)
    if np.ptp(logE) == 0.0:
        return DecayFit(rate=0.0, offset=float(logE[0]), quality=1.0)
    slope, intercept = np.polyfit(tw, logE, 1)
    resid = logE - (slope * tw + intercept)
    ss_tot = float(np.sum((logE - logE.mean()) ** 2))
    quality = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return DecayFit(rate=float(-slope) + 0.0, offset=float(intercept), quality=quality)


def kato_smoothing_ratio(trace: EnergyTrace, alpha: float, beta: float, horizon: float) -> float:
    """[(3 alpha/2) int u_x^2 - (5 beta/2) int u_xx^2] / ((1 + T) ||(u0, z0)||_H^2)."""
    if trace.h_norm0 <= 0:
        raise ValueError("zero initial data: smoothing ratio undefined")
    num = 1.5 * alpha * trace.int_ux2 - 2.5 * beta * trace.int_uxx2
    return num / ((1.0 + horizon) * trace.h_norm0)
