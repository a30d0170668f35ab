"""Discretized problem: grid, coefficient fields and the mode-dependent weights.

Every feedback mode fits the common linear form

    u_t + alpha u_xxx + beta u_xxxxx + gamma d_x^{-1} u_yy + (1/2)(u^2)_x
        + c(x, y) u + d(x, y) u(t - h) = f

with
    general     c = a           d = b
    perturbed   c = a + xi b    d = b
    mu          c = mu1 a       d = mu2 a

and an energy (1/2) int u^2 + int int int w(x, y) z^2 drho whose delay weight is
    general     w = h b / 2
    perturbed   w = xi h b / 2
    mu          w = xi a / 2      (times h with ``mu_energy_with_h``)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kkpdelay.delay import DelayLine
from kkpdelay.grid import Grid
from kkpdelay.params import ParamSet, SimConfig, build_coefficient_field


@dataclass
class Model:
    params: ParamSet
    config: SimConfig
    grid: Grid
    a: np.ndarray
    b: np.ndarray
    a_sup: float
    b_sup: float
    reaction: np.ndarray = field(init=False, repr=False)
    delay_coef: np.ndarray = field(init=False, repr=False)
    delay_weight: np.ndarray = field(init=False, repr=False)
    v2_weight: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = self.params
        h = p.delay
        xi = p.xi if p.xi is not None else 1.0
        if p.mode == "general":
            self.reaction = self.a.copy()
            self.delay_coef = self.b.copy()
            self.delay_weight = 0.5 * h * self.b
            self.v2_weight = 0.5 * h * self.b
        elif p.mode == "perturbed":
            self.reaction = self.a + xi * self.b
            self.delay_coef = self.b.copy()
            self.delay_weight = 0.5 * xi * h * self.b
            self.v2_weight = 0.5 * h * self.b
        elif p.mode == "mu":
            scale = h if self.config.mu_energy_with_h else 1.0
            self.reaction = p.mu1 * self.a
            self.delay_coef = p.mu2 * self.a
            self.delay_weight = 0.5 * xi * scale * self.a
            self.v2_weight = 0.5 * xi * scale * self.a
        else:  # pragma: no cover - validate() rejects it
            raise ValueError(p.mode)

    @classmethod
    def build(cls, params: ParamSet, config: SimConfig) -> "Model":
        grid = Grid(config.nx, config.ny, params.length)
        a, a_sup = build_coefficient_field(params.feedback.a, grid)
        b, b_sup = build_coefficient_field(params.feedback.b, grid)
        return cls(params, config, grid, a, b, a_sup, b_sup)

    @property
    def feedback_weight(self) -> np.ndarray:
        """Coefficient whose support plays the role of omega in the mode's hypothesis."""
        return self.b if self.params.mode == "perturbed" else self.a

    @property
    def xi_eff(self) -> float:
        return self.params.xi if self.params.xi is not None else 1.0


@dataclass
class SimState:
    t: float
    step: int
    u: np.ndarray
    delay: DelayLine
    prev_nonlinear: np.ndarray | None = None

    def copy(self) -> "SimState":
        return SimState(
            self.t,
            self.step,
            self.u.copy(),
            self.delay.copy(),
            None if self.prev_nonlinear is None else self.prev_nonlinear.copy(),
        )
