"""Time integration of the damped, delayed K-KP-II systems.

Two schemes share one step function (``SimConfig.scheme``):

``cn`` (default)
    The whole linear operator
        Lu = alpha D3 u + beta D5 u + gamma S Dyy u + c u
    is treated with the theta-method (Crank-Nicolson for theta = 1/2) through
    one sparse LU of the 2-D operator on interior nodes. The delay feedback
    d * z(1) is averaged between the two time levels (both are stored in the
    history buffer), any source is averaged the same way, and only the
    nonlinear flux is extrapolated explicitly (Adams-Bashforth 2, first step
    forward Euler). For linear runs the discrete energy balance then holds
    exactly, up to the dispersive boundary closure.

``imex``
    alpha D3 + beta D5 + c is implicit per y-line (banded LU); the nonlocal
    term gamma S Dyy u joins the nonlinear flux in the AB2 extrapolation.
    Cheaper per step but conditionally stable: see :func:`imex_dt_limit`.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from kkpdelay.delay import DelayLine
from kkpdelay.energy import (
    EnergyTrace,
    boundary_trace_norms,
    h_norm_sq,
    midpoint_residual,
    record_row,
    sobolev_x_integrands,
)
from kkpdelay.grid import (
    Grid,
    antideriv_matrix,
    apply_bc,
    assemble_x_operator,
    dyy_matrix,
    integral,
    nonlinear_flux,
    nonlocal_term,
    x_derivative_matrix,
    x_line_operator,
)
from kkpdelay.model import Model, SimState
from kkpdelay.params import ParamSet, SimConfig

log = logging.getLogger(__name__)

Source = Callable[[float], np.ndarray]
ENERGY_OVERFLOW = 1e150


def imex_dt_limit(grid: Grid, gamma: float = 1.0, c: float = 0.25) -> float:
    """Step-size guidance for the explicit nonlocal term: dt <= c dy^2 / (gamma L).

    Frozen-coefficient estimate: the spectral radius of gamma S Dyy is at most
    gamma * ||S|| * ||Dyy|| ~ gamma * L * 4/dy^2.
    """
    return c * grid.dy**2 / (gamma * grid.length)


def linear_operator(model: Model) -> sp.csr_matrix:
    """Sparse 2-D linear operator on interior unknowns, index i*(ny-2) + j."""
    g, p = model.grid, model.params
    nyi = g.ny - 2
    dx_op = p.alpha * x_derivative_matrix(g.nx, g.length, 3) + p.beta * x_derivative_matrix(g.nx, g.length, 5)
    op = sp.kron(sp.csr_matrix(dx_op), sp.identity(nyi))
    op = op + p.gamma * sp.kron(sp.csr_matrix(antideriv_matrix(g.nx, g.length)), sp.csr_matrix(dyy_matrix(g.ny, g.length)))
    op = op + sp.diags(model.reaction[1:-1, 1:-1].ravel())
    return sp.csr_matrix(op)


class LinearSolver:
    """Implicit part of one step, prepared once per run."""

    def __init__(self, model: Model):
        cfg = model.config
        self.model = model
        self.scheme = cfg.scheme
        self.theta = cfg.theta
        self.dt = cfg.dt
        g = model.grid
        self.shape = g.interior_shape
        if self.scheme == "cn":
            self.op = linear_operator(model)
            n = self.op.shape[0]
            lhs = sp.identity(n, format="csc") + self.theta * self.dt * self.op.tocsc()
            try:
                self._lu = spla.splu(lhs.tocsc())
            except RuntimeError as exc:
                raise np.linalg.LinAlgError(f"implicit operator factorization failed: {exc}") from exc
        elif self.scheme == "imex":
            self.xop = assemble_x_operator(model.params, g, self.theta, self.dt, model.reaction)
            base = x_line_operator(model.params, g)
            eye = np.eye(g.nx - 2)
            self._explicit_x = [
                eye - (1 - self.theta) * self.dt * (base + np.diag(model.reaction[1:-1, j + 1]))
                for j in range(g.ny - 2)
            ]
        else:
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def explicit(self, u_int: np.ndarray) -> np.ndarray:
        """(I - (1 - theta) dt L) u for the implicitly treated part L."""
        if self.scheme == "cn":
            flat = u_int.ravel()
            return (flat - (1 - self.theta) * self.dt * (self.op @ flat)).reshape(self.shape)
        out = np.empty_like(u_int)
        for j, m in enumerate(self._explicit_x):
            out[:, j] = m @ u_int[:, j]
        return out

    def solve(self, rhs_int: np.ndarray) -> np.ndarray:
        if self.scheme == "cn":
            return self._lu.solve(rhs_int.ravel()).reshape(self.shape)
        return self.xop.solve(rhs_int)


def initial_state(model: Model, u0: np.ndarray, z0) -> SimState:
    g, cfg = model.grid, model.config
    u = apply_bc(np.array(u0, dtype=float, copy=True))
    if u.shape != g.shape:
        raise ValueError(f"initial field has shape {u.shape}, grid is {g.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("initial field is not finite")
    dl = DelayLine.init(z0, g.shape, cfg.n_rho, model.params.delay, cfg.dt, u0=u)
    return SimState(t=0.0, step=0, u=u, delay=dl)


def step(state: SimState, model: Model, solver: LinearSolver, source: Source | None = None) -> SimState:
    """Advance one time step; returns a new state (the delay buffer is reused)."""
    cfg, p, g = model.config, model.params, model.grid
    dt, th = cfg.dt, cfg.theta
    n_rho = state.delay.n_rho
    u = state.u
    inner = (slice(1, -1), slice(1, -1))

    z_now = state.delay.slice(n_rho)        # u(t_n - h)
    z_next = state.delay.slice(n_rho - 1)   # u(t_{n+1} - h)
    rhs = solver.explicit(u[inner])
    rhs -= dt * (model.delay_coef[inner] * (th * z_next[inner] + (1 - th) * z_now[inner]))

    explicit_now = np.zeros(g.interior_shape)
    if p.nonlinear:
        explicit_now += nonlinear_flux(u, g)[inner]
    if cfg.scheme == "imex":
        explicit_now += nonlocal_term(u, g, p.gamma)[inner]
    prev = state.prev_nonlinear if state.prev_nonlinear is not None else explicit_now
    rhs -= dt * (1.5 * explicit_now - 0.5 * prev)

    if source is not None:
        t0, t1 = state.t, (state.step + 1) * dt
        rhs += dt * (th * source(t1)[inner] + (1 - th) * source(t0)[inner])

    u_new = g.embed(solver.solve(rhs))
    if not np.all(np.isfinite(u_new)):
        raise FloatingPointError(f"non-finite field at step {state.step + 1}")
    dl = state.delay.advance(u_new)
    return SimState(t=(state.step + 1) * dt, step=state.step + 1, u=u_new, delay=dl, prev_nonlinear=explicit_now)


@dataclass
class RunArtifacts:
    trace: EnergyTrace
    final: SimState
    model: Model
    snapshots: dict[float, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)
    gronwall_max_ratio: float = float("nan")


def param_hash(params: ParamSet, cfg: SimConfig | None = None) -> str:
    items = sorted((k, repr(v)) for k, v in params.to_raw().items())
    if cfg is not None:
        items += sorted((f"cfg.{k}", repr(getattr(cfg, k))) for k in cfg.__dataclass_fields__)
    return hashlib.sha256(repr(items).encode()).hexdigest()[:16]


def run_metadata(model: Model) -> dict[str, str]:
    cfg, p = model.config, model.params
    meta = {
        "scheme": cfg.scheme,
        "theta": repr(cfg.theta),
        "implicit_terms": "alpha*D3 + beta*D5 + gamma*S*Dyy + c" if cfg.scheme == "cn" else "alpha*D3 + beta*D5 + c (per y-line)",
        "explicit_terms": ("nonlinear flux (AB2)" if p.nonlinear else "none")
        + ("; nonlocal term (AB2)" if cfg.scheme == "imex" else ""),
        "delay_feedback": "theta-averaged between time levels (exact-shift history)",
        "damping": "implicit (diagonal of the implicit operator)",
        "rho_quadrature": cfg.rho_quadrature,
        "mode": p.mode,
        "hypothesis": p.hypothesis,
        "nonlinear": str(p.nonlinear),
        "param_hash": param_hash(p, cfg),
    }
    if cfg.scheme == "imex":
        lim = imex_dt_limit(model.grid, p.gamma)
        meta["imex_dt_limit"] = repr(lim)
        meta["imex_dt_ok"] = str(cfg.dt <= lim)
    return meta


def simulate(
    params: ParamSet,
    cfg: SimConfig,
    u0: np.ndarray,
    z0=0.0,
    eta: float = 0.0,
    sigma: float = 0.0,
    source: Source | None = None,
    keep_history: bool = False,
    model: Model | None = None,
) -> RunArtifacts:
    """Integrate to ``cfg.t_end`` recording the energy trace every step.

    ``eta``/``sigma`` set the Lyapunov weights of the V column. With
    ``keep_history`` every u^n is kept in ``artifacts.history`` (testing aid).
    """
    model = model or Model.build(params, cfg)
    g = model.grid
    solver = LinearSolver(model)
    state = initial_state(model, u0, z0)
    trace = EnergyTrace(eta=eta, sigma=sigma)
    trace.h_norm0 = h_norm_sq(state.u, state.delay, model)

    history = [state.u.copy()] if keep_history else None
    snapshots: dict[float, np.ndarray] = {}
    pending = sorted(cfg.snapshot_times)

    def grab(st: SimState):
        while pending and pending[0] <= st.t + 0.5 * cfg.dt:
            snapshots[pending.pop(0)] = st.u.copy()

    w_fb = model.feedback_weight

    def integrands(u: np.ndarray, z1: np.ndarray) -> np.ndarray:
        """Kato, boundary-trace and damping integrands at one (u, z(1)) pair."""
        ux2, uxx2 = sobolev_x_integrands(u, g)
        txx, tinv = boundary_trace_norms(u, g)
        return np.array([ux2, uxx2, txx, tinv, integral(w_fb * u * u, g), integral(w_fb * z1 * z1, g)])

    row = record_row(state, model, eta, sigma)
    trace.rows.append(row)
    grab(state)
    acc = np.zeros(6)

    growth = model.xi_eff * float(np.max(model.a)) / params.delay if params.mode == "mu" else None
    gronwall = 0.0 if trace.h_norm0 > 0 else float("nan")

    for _ in range(cfg.n_steps):
        u_prev, z_prev, e_prev = state.u, state.delay.sample(1.0).copy(), row[1]
        state = step(state, model, solver, source)
        row = record_row(state, model, eta, sigma)
        if not math.isfinite(row[1]) or row[1] > ENERGY_OVERFLOW:
            raise FloatingPointError(f"energy overflow at step {state.step} (E = {row[1]!r})")
        res = midpoint_residual(e_prev, row[1], cfg.dt, u_prev, state.u, z_prev, state.delay.sample(1.0), model)
        # time integrals by the midpoint rule, the quadrature of the CN energy balance
        acc += cfg.dt * integrands(0.5 * (u_prev + state.u), 0.5 * (z_prev + state.delay.sample(1.0)))
        row = row[:9] + (res,)
        if state.step % cfg.trace_stride:
            row = row[:5] + (float("nan"), float("nan")) + row[7:]
        trace.rows.append(row)
        if growth is not None and trace.h_norm0 > 0:
            ratio = h_norm_sq(state.u, state.delay, model) / (math.exp(growth * state.t) * trace.h_norm0)
            gronwall = max(gronwall, ratio)
        if keep_history:
            history.append(state.u.copy())
        grab(state)

    (trace.int_ux2, trace.int_uxx2, trace.int_trace_xx, trace.int_trace_inv,
     trace.int_damp_now, trace.int_damp_delayed) = acc
    if growth is not None and gronwall > 1.0 + 1e-9:
        log.warning("Gronwall envelope exceeded: max ratio %.6g", gronwall)

    art = RunArtifacts(
        trace=trace,
        final=state,
        model=model,
        snapshots=snapshots,
        metadata=run_metadata(model),
        gronwall_max_ratio=gronwall if growth is not None else float("nan"),
    )
    if keep_history:
        art.history = history  # type: ignore[attr-defined]
    return art


def run_linear(model: Model, u0: np.ndarray, z0, source: Source | None = None) -> list[np.ndarray]:
    """Plain linear run returning every u^n (no trace bookkeeping)."""
    solver = LinearSolver(model)
    state = initial_state(model, u0, z0)
    out = [state.u.copy()]
    for _ in range(model.config.n_steps):
        state = step(state, model, solver, source)
        out.append(state.u.copy())
    return out


def superposition_fields(params: ParamSet, cfg: SimConfig, u0: np.ndarray, z0=0.0):
    """(u, v, w) histories of the splitting u = v + w.

    u solves the unperturbed system (damping a, delay weight b); v the
    perturbed homogeneous system (damping a + xi b) with the same data; w the
    unperturbed system with zero data and source xi b v.
    """
    if params.nonlinear:
        raise ValueError("superposition check needs a linear run (nonlinear=False)")
    if params.xi is None:
        raise ValueError("superposition check needs xi")
    m_u = Model.build(params.with_(mode="general"), cfg)
    m_v = Model.build(params.with_(mode="perturbed"), cfg)
    m_w = m_u
    u_hist = run_linear(m_u, u0, z0)
    v_hist = run_linear(m_v, u0, z0)
    src_coef = params.xi * m_u.b

    def source(t: float) -> np.ndarray:
        return src_coef * v_hist[int(round(t / cfg.dt))]

    w_hist = run_linear(m_w, np.zeros(m_u.grid.shape), 0.0, source)
    return m_u, u_hist, v_hist, w_hist


def superposition_check(params: ParamSet, cfg: SimConfig, u0: np.ndarray, z0=0.0) -> float:
    """max_n ||u^n - (v^n + w^n)||_{L^2}."""
    model, u_hist, v_hist, w_hist = superposition_fields(params, cfg, u0, z0)
    worst = 0.0
    for u, v, w in zip(u_hist, v_hist, w_hist):
        d = u - v - w
        worst = max(worst, math.sqrt(max(integral(d * d, model.grid), 0.0)))
    return worst
