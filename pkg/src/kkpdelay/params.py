"""Model parameters, coefficient fields and their validation.

All sign and interval constraints are checked in one pass; :func:`validate`
raises a :class:`ValidationError` that carries every violation found, not
just the first one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping

import numpy as np

MODES = ("general", "perturbed", "mu")
COEFF_KINDS = ("constant", "indicator", "smooth_bump")


@dataclass(frozen=True)
class Violation:
    constraint: str
    value: Any
    message: str

    def __str__(self) -> str:
        return f"{self.constraint}: {self.message} (got {self.value!r})"


class ValidationError(ValueError):
    """Raised with the complete list of violated constraints."""

    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class Rect:
    """Closed axis-aligned rectangle ``[x0, x1] x [y0, y1]``."""

    x0: float
    x1: float
    y0: float
    y1: float

    @classmethod
    def parse(cls, text: str | tuple | list | "Rect") -> "Rect":
        if isinstance(text, Rect):
            return text
        if isinstance(text, str):
            parts = [float(p) for p in text.replace(";", ",").split(",") if p.strip()]
        else:
            parts = [float(p) for p in text]
        if len(parts) != 4:
            raise ValueError(f"rectangle needs 4 numbers x0,x1,y0,y1, got {text!r}")
        return cls(*parts)

    def contains(self, x, y):
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)

    def inside_square(self, length: float) -> bool:
        return 0.0 <= self.x0 < self.x1 <= length and 0.0 <= self.y0 < self.y1 <= length

    def __str__(self) -> str:
        return f"{self.x0!r},{self.x1!r},{self.y0!r},{self.y1!r}"


@dataclass(frozen=True)
class CoefficientSpec:
    """Recipe for a nonnegative coefficient field a(x, y) or b(x, y).

    ``constant``    value everywhere.
    ``indicator``   value on the closed support rectangle, 0 elsewhere.
    ``smooth_bump`` value * exp(1 - 1/(1 - r^2)) for r < 1, 0 otherwise, where
                    r^2 = ((x - cx)/hx)^2 + ((y - cy)/hy)^2 and (cx, cy), (hx, hy)
                    are the centre and half-widths of the support rectangle.
    """

    kind: str = "constant"
    value: float = 0.0
    support: Rect | None = None

    def evaluate(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        if self.kind == "constant":
            return np.full(x.shape, float(self.value))
        if self.support is None:
            raise ValueError(f"coefficient kind {self.kind!r} needs a support rectangle")
        s = self.support
        if self.kind == "indicator":
            return np.where(s.contains(x, y), float(self.value), 0.0)
        if self.kind == "smooth_bump":
            cx, cy = 0.5 * (s.x0 + s.x1), 0.5 * (s.y0 + s.y1)
            hx, hy = 0.5 * (s.x1 - s.x0), 0.5 * (s.y1 - s.y0)
            r2 = ((x - cx) / hx) ** 2 + ((y - cy) / hy) ** 2
            out = np.zeros(x.shape)
            inside = r2 < 1.0
            out[inside] = self.value * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
            return out
        raise ValueError(f"unknown coefficient kind {self.kind!r}")


@dataclass(frozen=True)
class PhysParams:
    alpha: float
    beta: float
    length: float
    delay: float
    gamma: float = 1.0


@dataclass(frozen=True)
class FeedbackParams:
    mode: str = "general"
    a: CoefficientSpec = CoefficientSpec()
    b: CoefficientSpec = CoefficientSpec()
    xi: float | None = None
    mu1: float | None = None
    mu2: float | None = None
    omega: Rect | None = None


@dataclass(frozen=True)
class ParamSet:
    phys: PhysParams
    feedback: FeedbackParams
    nonlinear: bool = True
    # which positivity hypothesis was enforced on omega (records the per-mode choice)
    hypothesis: str = ""

    # shorthands used all over the numerics
    @property
    def alpha(self) -> float:
        return self.phys.alpha

    @property
    def beta(self) -> float:
        return self.phys.beta

    @property
    def gamma(self) -> float:
        return self.phys.gamma

    @property
    def length(self) -> float:
        return self.phys.length

    @property
    def delay(self) -> float:
        return self.phys.delay

    @property
    def mode(self) -> str:
        return self.feedback.mode

    @property
    def xi(self) -> float | None:
        return self.feedback.xi

    @property
    def mu1(self) -> float | None:
        return self.feedback.mu1

    @property
    def mu2(self) -> float | None:
        return self.feedback.mu2

    def with_(self, **changes) -> "ParamSet":
        """Return a copy with physical/feedback fields replaced (not re-validated)."""
        phys_keys = {f for f in PhysParams.__dataclass_fields__}
        fb_keys = {f for f in FeedbackParams.__dataclass_fields__}
        phys = replace(self.phys, **{k: v for k, v in changes.items() if k in phys_keys})
        fb = replace(self.feedback, **{k: v for k, v in changes.items() if k in fb_keys})
        rest = {k: v for k, v in changes.items() if k not in phys_keys | fb_keys}
        return replace(self, phys=phys, feedback=fb, **rest)

    def to_raw(self) -> dict[str, Any]:
        raw: dict[str, Any] = dict(asdict(self.phys))
        raw["mode"] = self.feedback.mode
        raw["nonlinear"] = self.nonlinear
        for name in ("xi", "mu1", "mu2"):
            val = getattr(self.feedback, name)
            if val is not None:
                raw[name] = val
        if self.feedback.omega is not None:
            raw["omega"] = str(self.feedback.omega)
        for tag in ("a", "b"):
            spec: CoefficientSpec = getattr(self.feedback, tag)
            raw[f"{tag}.kind"] = spec.kind
            raw[f"{tag}.value"] = spec.value
            if spec.support is not None:
                raw[f"{tag}.rect"] = str(spec.support)
        return raw


PARAM_KEYS = frozenset(
    {
        "alpha", "beta", "gamma", "length", "delay", "mode", "xi", "mu1", "mu2",
        "omega", "nonlinear",
        "a.kind", "a.value", "a.rect", "b.kind", "b.value", "b.rect",
    }
)


def _as_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _floor_on_omega(spec: CoefficientSpec, omega: Rect, samples: int = 9) -> float:
    xs = np.linspace(omega.x0, omega.x1, samples)
    ys = np.linspace(omega.y0, omega.y1, samples)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return float(spec.evaluate(X, Y).min())


def validate(raw: Mapping[str, Any] | ParamSet) -> ParamSet:
    """Check every constraint on a raw parameter mapping and build a ParamSet.

    Accepts a ParamSet too (re-validates it), which makes the function
    idempotent. Raises ValidationError listing all violations.
    """
    if isinstance(raw, ParamSet):
        raw = raw.to_raw()
    bad: list[Violation] = []

    unknown = sorted(set(raw) - PARAM_KEYS)
    for key in unknown:
        bad.append(Violation("known key", key, f"unknown parameter key {key!r}"))

    def num(key: str, default=None) -> float | None:
        if key not in raw or raw[key] is None or raw[key] == "":
            if default is None:
                return None
            return default
        try:
            v = float(raw[key])
        except (TypeError, ValueError):
            bad.append(Violation(key, raw[key], f"{key} must be a number"))
            return None
        if not math.isfinite(v):
            bad.append(Violation(key, raw[key], f"{key} must be finite"))
            return None
        return v

    alpha = num("alpha")
    beta = num("beta")
    gamma = num("gamma", 1.0)
    length = num("length")
    delay = num("delay")

    for key, val in (("alpha", alpha), ("beta", beta), ("length", length), ("delay", delay)):
        if val is None and key not in raw:
            bad.append(Violation(key, None, f"{key} is required"))
    if alpha is not None and not alpha > 0:
        bad.append(Violation("alpha > 0", alpha, "alpha must be positive"))
    if beta is not None and not beta < 0:
        bad.append(Violation("beta < 0", beta, "beta must be negative"))
    if gamma is not None and gamma != 1.0:
        bad.append(Violation("gamma = 1", gamma, "gamma must be +1 (K-KP-II branch only)"))
    if length is not None and not length > 0:
        bad.append(Violation("length > 0", length, "domain length must be positive"))
    if delay is not None and not delay > 0:
        bad.append(Violation("delay > 0", delay, "delay h must be positive"))

    mode = str(raw.get("mode", "general")).strip()
    if mode not in MODES:
        bad.append(Violation("mode", mode, f"mode must be one of {MODES}"))

    try:
        nonlinear = _as_bool(raw.get("nonlinear", True))
    except ValueError:
        bad.append(Violation("nonlinear", raw.get("nonlinear"), "nonlinear must be a boolean"))
        nonlinear = True

    omega = None
    if raw.get("omega") not in (None, ""):
        try:
            omega = Rect.parse(raw["omega"])
        except ValueError as exc:
            bad.append(Violation("omega", raw["omega"], str(exc)))
    if omega is not None and length is not None and not omega.inside_square(length):
        bad.append(Violation("omega within domain", str(omega), "omega must be a nonempty sub-rectangle of (0,L)^2"))
        omega = None

    specs: dict[str, CoefficientSpec] = {}
    for tag in ("a", "b"):
        kind = str(raw.get(f"{tag}.kind", "constant")).strip()
        value = num(f"{tag}.value", 0.0)
        support = None
        if kind not in COEFF_KINDS:
            bad.append(Violation(f"{tag}.kind", kind, f"kind must be one of {COEFF_KINDS}"))
            kind = "constant"
        if value is not None and value < 0:
            bad.append(Violation(f"{tag} >= 0", value, f"coefficient {tag} must be nonnegative"))
        rect_raw = raw.get(f"{tag}.rect")
        if rect_raw not in (None, ""):
            try:
                support = Rect.parse(rect_raw)
            except ValueError as exc:
                bad.append(Violation(f"{tag}.rect", rect_raw, str(exc)))
        if kind != "constant":
            if support is None:
                support = omega
            if support is None:
                bad.append(Violation(f"{tag}.rect", None, f"{kind} coefficient {tag} needs a support rectangle"))
            elif length is not None and not support.inside_square(length):
                bad.append(Violation(f"{tag} support within domain", str(support), f"support of {tag} must lie in (0,L)^2"))
                support = None
        specs[tag] = CoefficientSpec(kind, value if value is not None else 0.0, support if kind != "constant" else None)

    xi = num("xi")
    mu1 = num("mu1")
    mu2 = num("mu2")
    hypothesis = ""

    if mode == "perturbed":
        if xi is None:
            bad.append(Violation("xi", None, "perturbed mode needs xi > 1"))
        elif not xi > 1:
            bad.append(Violation("xi > 1", xi, "perturbed mode requires xi > 1"))
    if mode == "mu":
        if mu1 is None or mu2 is None or xi is None:
            bad.append(Violation("mu1, mu2, xi", (mu1, mu2, xi), "mu mode needs mu1, mu2 and xi"))
        else:
            if not mu2 > 0:
                bad.append(Violation("mu2 > 0", mu2, "mu2 must be positive"))
            if not mu1 > mu2:
                bad.append(Violation("mu1 > mu2", (mu1, mu2), "mu1 must exceed mu2"))
            if delay is not None and delay > 0:
                lo, hi = delay * mu2, delay * (2 * mu1 - mu2)
                if not xi > lo:
                    bad.append(Violation("h*mu2 < xi", xi, f"xi must exceed h*mu2 = {lo!r} (strict)"))
                if not xi < hi:
                    bad.append(Violation("xi < h*(2*mu1 - mu2)", xi, f"xi must be below h*(2*mu1-mu2) = {hi!r} (strict)"))
    if mode == "general" and xi is not None and not xi > 0:
        bad.append(Violation("xi > 0", xi, "xi must be positive when given"))

    # positivity floor on omega: each mode enforces its own theorem's hypothesis
    floor_tag = {"general": "a", "perturbed": "b", "mu": "a"}.get(mode)
    if floor_tag is not None:
        hypothesis = f"{floor_tag} >= {floor_tag}0 > 0 on omega"
        if omega is None:
            bad.append(Violation("omega", None, f"{mode} mode needs omega (positivity set of {floor_tag})"))
        else:
            floor = _floor_on_omega(specs[floor_tag], omega)
            if not floor > 0:
                bad.append(Violation(hypothesis, floor, f"{floor_tag} must be bounded below by a positive constant on omega"))

    if bad:
        raise ValidationError(bad)

    phys = PhysParams(alpha=alpha, beta=beta, length=length, delay=delay, gamma=gamma)
    fb = FeedbackParams(mode=mode, a=specs["a"], b=specs["b"], xi=xi, mu1=mu1, mu2=mu2, omega=omega)
    return ParamSet(phys=phys, feedback=fb, nonlinear=nonlinear, hypothesis=hypothesis)


SCHEMES = ("cn", "imex")
ETA_EQUATIONS = ("fg", "theorem12")
RHO_QUADRATURES = ("midpoint", "trapezoid")


@dataclass(frozen=True)
class SimConfig:
    """Discretization and run controls.

    The delay grid is tied to the time step: ``delay == n_rho * dt`` so the
    history buffer is advanced by exact index shifts.
    """

    nx: int = 32
    ny: int = 32
    n_rho: int = 10
    dt: float = 0.1
    t_end: float = 1.0
    scheme: str = "cn"
    theta: float = 0.5
    eta_equation: str = "fg"
    mu_const: float = 0.5
    eps_const: float = 0.25
    r_small: float = 1e-3
    c_gn: float | None = None
    trace_stride: int = 1
    snapshot_times: tuple[float, ...] = field(default_factory=tuple)
    mu_energy_with_h: bool = False
    rho_quadrature: str = "midpoint"
    fit_skip: float = 0.1
    out_dir: str = "out"

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_end / self.dt + 1e-9))


SIM_KEYS = frozenset(
    {
        "nx", "ny", "n_rho", "dt", "t_end", "scheme", "theta", "eta_equation",
        "mu_const", "eps_const", "r_small", "c_gn", "trace_stride", "snapshot_times",
        "mu_energy_with_h", "rho_quadrature", "fit_skip", "out_dir",
    }
)


def validate_config(raw: Mapping[str, Any], delay: float) -> SimConfig:
    """Build a SimConfig from raw values; ``dt`` defaults to ``delay / n_rho``."""
    bad: list[Violation] = []
    for key in sorted(set(raw) - SIM_KEYS):
        bad.append(Violation("known key", key, f"unknown config key {key!r}"))
    vals: dict[str, Any] = {}
    defaults = SimConfig()

    def get(key, conv):
        if key not in raw or raw[key] in (None, ""):
            return getattr(defaults, key)
        try:
            return conv(raw[key])
        except (TypeError, ValueError):
            bad.append(Violation(key, raw[key], f"cannot parse {key}"))
            return getattr(defaults, key)

    for key in ("nx", "ny", "n_rho", "trace_stride"):
        vals[key] = get(key, lambda v: int(float(v)))
    for key in ("t_end", "theta", "mu_const", "eps_const", "r_small", "fit_skip"):
        vals[key] = get(key, float)
    vals["c_gn"] = get("c_gn", float)
    vals["scheme"] = get("scheme", lambda v: str(v).strip())
    vals["eta_equation"] = get("eta_equation", lambda v: str(v).strip())
    vals["rho_quadrature"] = get("rho_quadrature", lambda v: str(v).strip())
    vals["mu_energy_with_h"] = get("mu_energy_with_h", _as_bool)
    vals["out_dir"] = get("out_dir", str)
    vals["snapshot_times"] = get(
        "snapshot_times",
        lambda v: tuple(float(s) for s in (v.split(",") if isinstance(v, str) else v) if str(s).strip()),
    )

    n_rho = vals["n_rho"]
    if n_rho < 1:
        bad.append(Violation("n_rho >= 1", n_rho, "need at least one delay slice"))
        n_rho = 1
    if "dt" in raw and raw["dt"] not in (None, ""):
        dt = get("dt", float)
    else:
        dt = delay / n_rho
    vals["dt"] = dt

    if vals["nx"] < 8 or vals["ny"] < 8:
        bad.append(Violation("nx, ny >= 8", (vals["nx"], vals["ny"]), "grid needs at least 8 nodes per direction"))
    if not dt > 0:
        bad.append(Violation("dt > 0", dt, "time step must be positive"))
    elif abs(delay - n_rho * dt) > 1e-12 * max(delay, 1.0):
        bad.append(Violation("delay = n_rho*dt", (delay, n_rho, dt), "delay must equal n_rho*dt exactly (exact-shift history)"))
    t_end = vals["t_end"]
    if t_end < 0 or (0 < t_end < dt * (1 - 1e-12)):
        bad.append(Violation("t_end = 0 or t_end >= dt", t_end, "t_end must be 0 or at least one step"))
    if vals["scheme"] not in SCHEMES:
        bad.append(Violation("scheme", vals["scheme"], f"scheme must be one of {SCHEMES}"))
    if not 0 < vals["theta"] <= 1:
        bad.append(Violation("0 < theta <= 1", vals["theta"], "implicitness must be in (0,1]"))
    if vals["eta_equation"] not in ETA_EQUATIONS:
        bad.append(Violation("eta_equation", vals["eta_equation"], f"eta_equation must be one of {ETA_EQUATIONS}"))
    if vals["rho_quadrature"] not in RHO_QUADRATURES:
        bad.append(Violation("rho_quadrature", vals["rho_quadrature"], f"rho_quadrature must be one of {RHO_QUADRATURES}"))
    if not 0 < vals["mu_const"] < 1:
        bad.append(Violation("0 < mu_const < 1", vals["mu_const"], "mu must lie in (0,1)"))
    if not vals["eps_const"] > 0 or vals["mu_const"] + vals["eps_const"] >= 1:
        bad.append(Violation("eps > 0, mu + eps < 1", vals["eps_const"], "need eps > 0 and mu + eps < 1"))
    if vals["trace_stride"] < 1:
        bad.append(Violation("trace_stride >= 1", vals["trace_stride"], "stride must be positive"))
    if vals["c_gn"] is not None and not vals["c_gn"] > 0:
        bad.append(Violation("c_gn > 0", vals["c_gn"], "interpolation constant must be positive"))
    if bad:
        raise ValidationError(bad)
    return SimConfig(**vals)


def make_config(delay: float, n_rho: int, **kwargs) -> SimConfig:
    """Convenience constructor enforcing ``dt = delay / n_rho``."""
    raw = dict(kwargs)
    raw["n_rho"] = n_rho
    return validate_config(raw, delay)


def build_coefficient_field(spec: CoefficientSpec, grid) -> tuple[np.ndarray, float]:
    """Sample a coefficient on the grid nodes; returns (field, sup-norm)."""
    if spec.support is not None and not spec.support.inside_square(grid.length):
        raise ValueError(f"coefficient support {spec.support} lies outside the domain")
    values = spec.evaluate(grid.X, grid.Y)
    return values, float(np.max(values)) if values.size else 0.0
