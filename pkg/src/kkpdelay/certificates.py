"""Closed-form decay certificates.

Perturbed / general systems
    f(eta)     = 3 alpha eta / (L^2 (1 + 2 eta L))
    g(eta)     = sigma / (2h (xi + sigma)),  sigma(eta) = xi - 1 - 2 L eta (1 + 2 xi)
    eta*       : the unique crossing f = g on (0, (xi-1)/(2L(1+2xi)))
    theta      = f(eta*),  kappa = 1 + max(2 eta* L, sigma/xi)
    T0         = ln(2 xi kappa / mu) / (2 theta) + 1
    nu         = ln(1/(mu + eps)) / T0
    T_min      = -ln(mu/2)/nu + (2 ||b|| / nu + 1) T0

mu-system: sigma, eta fixed at half of their admissible bounds, theta at 0.99
of the smaller of its two bounds (see :func:`mu_certificate`).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import bisect

from kkpdelay.params import ParamSet

# bracket tolerance relative to the admissible interval length; steep g (small h)
# needs the tighter end of this to reach f = g to 1e-10
BISECT_XTOL = 1e-12
BISECT_MAXITER = 200


def eta_upper(p: ParamSet) -> float:
    """Right end (xi - 1)/(2L(1 + 2xi)) of the admissible eta interval."""
    xi, L = p.xi, p.length
    return (xi - 1.0) / (2.0 * L * (1.0 + 2.0 * xi))


def _check_eta(eta, p: ParamSet):
    hi = eta_upper(p)
    e = np.asarray(eta, dtype=float)
    tol = 1e-14 * max(1.0, hi)
    if np.any(e < -tol) or np.any(e > hi + tol):
        raise ValueError(f"eta must lie in [0, {hi!r}]")


def sigma_eta(eta, p: ParamSet):
    return p.xi - 1.0 - 2.0 * p.length * eta * (1.0 + 2.0 * p.xi)


def f_eta(eta, p: ParamSet):
    _check_eta(eta, p)
    L = p.length
    return 3.0 * p.alpha * eta / (L**2 * (1.0 + 2.0 * eta * L))


def g_eta(eta, p: ParamSet):
    _check_eta(eta, p)
    xi, L = p.xi, p.length
    return (xi - 1.0 - 2.0 * L * eta * (1.0 + 2.0 * xi)) / (
        2.0 * p.delay * (2.0 * xi - 1.0 - 2.0 * eta * L * (1.0 + 2.0 * xi))
    )


def f_variant(eta, p: ParamSet):
    """Left side 2 alpha eta / ((2 + 2 eta L) L^2) of the alternative eta equation."""
    L = p.length
    return 2.0 * p.alpha * eta / ((2.0 + 2.0 * eta * L) * L**2)


def fg_values(eta, p: ParamSet):
    """(f, g, sigma) at eta."""
    return f_eta(eta, p), g_eta(eta, p), sigma_eta(eta, p)


@dataclass
class Certificate:
    eta_star: float = float("nan")
    sigma: float = float("nan")
    theta: float = float("nan")
    kappa: float = float("nan")
    t0: float = float("nan")
    nu: float = float("nan")
    t_min: float = float("nan")
    delta_b_bound: float = float("nan")
    prefactor: float = float("nan")
    c_diss: float = float("nan")
    r_max: float = float("nan")
    mode: str = ""
    eta_equation: str = ""
    admissible: bool = True
    reasons: list[str] = field(default_factory=list)
    inputs: dict[str, float] = field(default_factory=dict)

    @property
    def rate_final(self) -> float:
        """Exponent of the final energy bound E(t) <= prefactor * exp(-rate_final t) E(0)."""
        return self.nu

    def reject(self, reason: str) -> None:
        self.admissible = False
        self.reasons.append(reason)

    def as_dict(self) -> dict[str, object]:
        d = asdict(self)
        d["rate_final"] = self.rate_final
        d["reasons"] = "; ".join(self.reasons)
        inputs = d.pop("inputs")
        for k, v in inputs.items():
            d[f"input.{k}"] = v
        return d

    def to_text(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            lines.append(f"{k} = {_fmt(v)}")
        return "\n".join(lines) + "\n"

    def csv_header(self) -> list[str]:
        return list(self.as_dict().keys())

    def csv_row(self) -> list[str]:
        return [_fmt(v) for v in self.as_dict().values()]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def eta_star(p: ParamSet, equation: str = "fg") -> tuple[float, float, float, float]:
    """Crossing of the two rate bounds; returns (eta*, theta, sigma, kappa).

    ``equation="fg"`` solves f = g; ``"theorem12"`` solves
    2 alpha eta / ((2 + 2 eta L) L^2) = sigma / (2h (xi + sigma)). In both
    cases theta = f(eta*).
    """
    if p.xi is None or not p.xi > 1:
        raise ValueError("eta* needs xi > 1")
    hi = eta_upper(p)
    if equation == "fg":
        lhs = lambda e: f_eta(e, p)  # noqa: E731
    elif equation == "theorem12":
        lhs = lambda e: f_variant(e, p)  # noqa: E731
    else:
        raise ValueError(f"unknown eta equation {equation!r}")

    def gap(e):
        return lhs(e) - g_eta(e, p)

    lo_val, hi_val = gap(0.0), gap(hi)
    # f(0) = 0 < g(0) and f(hi) > 0 = g(hi): the bracket always changes sign
    assert lo_val < 0 < hi_val, "no sign change of f - g on the admissible interval"
    root = bisect(gap, 0.0, hi, xtol=BISECT_XTOL * 1e-3 * hi, rtol=4 * np.finfo(float).eps, maxiter=BISECT_MAXITER)
    theta = f_eta(root, p)
    sigma = sigma_eta(root, p)
    kappa = 1.0 + max(2.0 * root * p.length, sigma / p.xi)
    return float(root), float(theta), float(sigma), float(kappa)


def kp_times(theta: float, kappa: float, xi: float, mu: float, eps: float, b_norm: float) -> dict[str, float]:
    """T0, nu, T_min, the ||b||_inf smallness bound and the final prefactor."""
    if not 0 < mu < 1:
        raise ValueError("mu must lie in (0, 1)")
    if not eps > 0 or not mu + eps < 1:
        raise ValueError("need eps > 0 and mu + eps < 1")
    if b_norm < 0:
        raise ValueError("b_norm must be nonnegative")
    if not theta > 0:
        raise ValueError("theta must be positive")
    t0 = math.log(2.0 * xi * kappa / mu) / (2.0 * theta) + 1.0
    nu = math.log(1.0 / (mu + eps)) / t0
    t_min = -math.log(mu / 2.0) / nu + (2.0 * b_norm / nu + 1.0) * t0
    # printed form: sqrt(eps) / (sqrt(eps^3 kappa) exp(...)), equal to 1/(eps sqrt(kappa) exp(...))
    expo = 0.5 * (1.0 + 3.0 * xi) * (math.log(2.0 * xi * kappa / mu) / (2.0 * theta) + 2.0)
    try:
        delta = math.sqrt(eps) / (math.sqrt(eps**3 * kappa) * math.exp(expo))
    except OverflowError:
        delta = 0.0
    delta = min(delta, 1.0)
    try:
        prefactor = math.exp((2.0 * b_norm + nu) * t0)
    except OverflowError:
        prefactor = math.inf
    return {"t0": t0, "nu": nu, "t_min": t_min, "delta_b_bound": delta, "prefactor": prefactor}


def kp_certificate(p: ParamSet, mu: float = 0.5, eps: float = 0.25, b_norm: float | None = None,
                   equation: str = "fg") -> Certificate:
    """Certificate for the delayed system with small delayed weight (perturbed machinery)."""
    cert = Certificate(mode=p.mode, eta_equation=equation)
    if p.xi is None or not p.xi > 1:
        cert.reject("xi > 1 required")
        return cert
    e, th, s, k = eta_star(p, equation)
    cert.eta_star, cert.theta, cert.sigma, cert.kappa = e, th, s, k
    if b_norm is None:
        b_norm = float(p.feedback.b.value)
    times = kp_times(th, k, p.xi, mu, eps, b_norm)
    for key, val in times.items():
        setattr(cert, key, val)
    cert.inputs = {"mu": mu, "eps": eps, "b_norm": b_norm}
    if b_norm > cert.delta_b_bound:
        cert.reject("delayed weight too large: ||b||_inf exceeds the smallness bound")
    return cert


def dissipation_constant(p: ParamSet, variant: str = "printed") -> tuple[float, tuple[float, float, float, float]]:
    """Four-term minimum C of the mu-system dissipation inequality.

    ``printed``: fourth term -mu2/h + xi/(2h) as displayed with the
    inequality. ``derived``: xi/(2h) - mu2/2, the coefficient of
    int a u^2(t-h) produced by the energy computation (Young's inequality
    on the cross term). Returns (C, terms); C may be <= 0 for ``printed``.
    """
    if p.mode != "mu":
        raise ValueError("dissipation constant is defined for the mu-system")
    b, g, xi, h, m1, m2 = p.beta, p.gamma, p.xi, p.delay, p.mu1, p.mu2
    t1, t2, t3 = -b / 2.0, g / 2.0, m1 - m2 / 2.0 - xi / (2.0 * h)
    if variant == "printed":
        t4 = -m2 / h + xi / (2.0 * h)
    elif variant == "derived":
        t4 = xi / (2.0 * h) - m2 / 2.0
    else:
        raise ValueError(f"unknown variant {variant!r}")
    terms = (t1, t2, t3, t4)
    return min(terms), terms


def mu_certificate(p: ParamSet, r: float, c_gn: float, path: str = "auto", c_variant: str = "printed") -> Certificate:
    """Decay constants for the mu-system.

    sigma = (1/2) (2h/xi) (mu1 - mu2/2 - xi/(2h))
    eta   = (1/2) min{ (xi/h - mu2)/(2 L mu2),
                       (mu1 - mu2/2 - (xi/(2h))(1 + sigma)) / (2 L mu1 + L mu2) }
    theta = 0.99 min{ eta (3 alpha - c^{4/3} r^{4/3} L^{10/3} / 2) / ((1 + 2 eta L) L^2),
                      xi sigma / (2h (xi + sigma xi)) }
    kappa = 1 + max{2 eta L, sigma};  r_max = (216 alpha^3)^{1/4} / (c L^{5/2}).

    ``path``: "beta_bound" needs beta < -1/30, "length_bound" needs L < (-30 beta / c)^{1/4},
    "auto" accepts either.
    """
    if p.mode != "mu":
        raise ValueError("mu_certificate needs a mu-mode parameter set")
    if not r > 0:
        raise ValueError("radius r must be positive")
    if c_gn < 0:
        raise ValueError("c_gn must be nonnegative")
    alpha, beta, L, h, xi, m1, m2 = p.alpha, p.beta, p.length, p.delay, p.xi, p.mu1, p.mu2
    cert = Certificate(mode="mu", eta_equation="policy")
    cert.inputs = {"r": r, "c_gn": c_gn}

    sigma = 0.5 * (2.0 * h / xi) * (m1 - m2 / 2.0 - xi / (2.0 * h))
    eta = 0.5 * min(
        (xi / h - m2) / (2.0 * L * m2),
        (m1 - m2 / 2.0 - (xi / (2.0 * h)) * (1.0 + sigma)) / (2.0 * L * m1 + L * m2),
    )
    bracket = 3.0 * alpha - 0.5 * c_gn ** (4.0 / 3.0) * r ** (4.0 / 3.0) * L ** (10.0 / 3.0)
    bound1 = eta / ((1.0 + 2.0 * eta * L) * L**2) * bracket
    bound2 = xi * sigma / (2.0 * h * (xi + sigma * xi))
    cert.sigma, cert.eta_star = sigma, eta
    cert.kappa = 1.0 + max(2.0 * eta * L, sigma)
    cert.r_max = math.inf if c_gn == 0 else (216.0 * alpha**3) ** 0.25 / (c_gn * L**2.5)
    cert.c_diss, _ = dissipation_constant(p, c_variant)

    if not sigma > 0 or not eta > 0:
        cert.reject("sigma and eta must be positive")
    if bracket <= 0:
        cert.reject("bracketed rate term 3*alpha - c^(4/3) r^(4/3) L^(10/3)/2 is nonpositive: theta undefined")
    else:
        cert.theta = 0.99 * min(bound1, bound2)
    if r >= cert.r_max:
        cert.reject("radius bound: r >= r_max")

    ok_beta = beta < -1.0 / 30.0
    ok_length = L < (-30.0 * beta / c_gn) ** 0.25 if c_gn > 0 else True
    if path == "beta_bound" and not ok_beta:
        cert.reject("beta < -1/30 required")
    elif path == "length_bound" and not ok_length:
        cert.reject("L < (-30 beta / c)^(1/4) required")
    elif path == "auto" and not (ok_beta or ok_length):
        cert.reject("neither beta < -1/30 nor L < (-30 beta / c)^(1/4) holds")
    elif path not in ("auto", "beta_bound", "length_bound"):
        raise ValueError(f"unknown path {path!r}")
    if cert.c_diss <= 0:
        cert.reasons.append(f"note: dissipation constant C = {cert.c_diss!r} is not positive ({c_variant} form)")
    return cert


def sweep(p: ParamSet, eta_samples) -> np.ndarray:
    """Rows (eta, f, g, min(f, g)) for plotting the rate trade-off."""
    e = np.asarray(eta_samples, dtype=float)
    f = f_eta(e, p)
    g = g_eta(e, p)
    return np.column_stack([e, f, g, np.minimum(f, g)])


def sweep_argmax(table: np.ndarray) -> float:
    return float(table[int(np.argmax(table[:, 3])), 0])


def observability_ratio(trace, e0: float | None = None) -> float:
    """E(0) / [int T_xx dt + int T_inv dt + int int int a (u^2 + u^2(t-h))].

    Uses the time integrals accumulated in an EnergyTrace.
    """
    E0 = trace.rows[0][1] if e0 is None else e0
    denom = trace.int_trace_xx + trace.int_trace_inv + trace.int_damp_now + trace.int_damp_delayed
    if not E0 > 0 or not denom > 0:
        raise ValueError("undefined ratio: zero initial data")
    return E0 / denom
