"""Uniform-grid operators for the K-KP-II system on (0, L)^2.

Fields are plain ``(nx, ny)`` arrays with ``f[i, j] = f(x_i, y_j)``.

Boundary closure in x
---------------------
The x-stencils are the centered second-order ones (widths 3, 3, 5, 7 for
orders 1, 2, 3, 5). Nodes near x = 0 and x = L need values outside the
domain. These ghost values come from the degree-6 polynomial that satisfies
the boundary conditions and interpolates the nearest interior values:

    x = 0:  p(0) = u_0, p'(0) = 0,              p(x_k) = u_k,      k = 1..5
    x = L:  p(L) = u_N, p'(L) = 0, p''(L) = 0,  p(x_{N-k}) = u_{N-k}, k = 1..4

so every stencil stays second-order accurate up to the boundary for fields
that satisfy u = u_x = 0 at both ends and u_xx(L) = 0. For orders 3 and 5
the value at the boundary node itself is the derivative of that polynomial.
Orders 1 and 2 use one-sided second-order formulas at boundary nodes; y
derivatives do the same.

The inverse x-derivative is psi(x) = -int_x^L f ds (trapezoid), the choice
satisfying psi(L) = 0 and psi_x = f.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg.lapack import dgbtrf, dgbtrs

_STENCILS = {
    1: np.array([-1.0, 0.0, 1.0]) / 2.0,
    2: np.array([1.0, -2.0, 1.0]),
    3: np.array([-1.0, 2.0, 0.0, -2.0, 1.0]) / 2.0,
    5: np.array([-1.0, 4.0, -5.0, 0.0, 5.0, -4.0, 1.0]) / 2.0,
}
N_GHOST = 2
N_LEFT = 5   # interior values used by the x = 0 closure polynomial
N_RIGHT = 4  # interior values used by the x = L closure polynomial


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    length: float
    x: np.ndarray = field(init=False, repr=False, compare=False)
    y: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid needs nx, ny >= 8 (got {self.nx}, {self.ny})")
        if not self.length > 0:
            raise ValueError("length must be positive")
        object.__setattr__(self, "x", np.linspace(0.0, self.length, self.nx))
        object.__setattr__(self, "y", np.linspace(0.0, self.length, self.ny))

    @property
    def dx(self) -> float:
        return self.length / (self.nx - 1)

    @property
    def dy(self) -> float:
        return self.length / (self.ny - 1)

    @property
    def X(self) -> np.ndarray:
        return np.broadcast_to(self.x[:, None], self.shape)

    @property
    def Y(self) -> np.ndarray:
        return np.broadcast_to(self.y[None, :], self.shape)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def interior_shape(self) -> tuple[int, int]:
        return (self.nx - 2, self.ny - 2)

    def trapezoid_weights(self) -> tuple[np.ndarray, np.ndarray]:
        wx = np.full(self.nx, self.dx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.ny, self.dy)
        wy[[0, -1]] *= 0.5
        return wx, wy

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def embed(self, interior: np.ndarray) -> np.ndarray:
        """Pad an interior array with zero boundary rows/columns."""
        out = np.zeros(self.shape)
        out[1:-1, 1:-1] = interior
        return out


def apply_bc(u: np.ndarray) -> np.ndarray:
    """Zero the Dirichlet boundary nodes in place and return ``u``."""
    u[0, :] = 0.0
    u[-1, :] = 0.0
    u[:, 0] = 0.0
    u[:, -1] = 0.0
    return u


# ----------------------------------------------------------------------------
# x-boundary closure

def _vander_row(s: float, deriv: int, deg: int) -> np.ndarray:
    row = np.zeros(deg + 1)
    for p in range(deriv, deg + 1):
        coef = 1.0
        for q in range(deriv):
            coef *= p - q
        row[p] = coef * s ** (p - deriv)
    return row


@lru_cache(maxsize=64)
def _closure_polynomial(dx: float, side: str) -> np.ndarray:
    """Map the closure data vector to monomial coefficients in s = x - x_boundary.

    Data order, left:  [u_0, u_x(0)=0, u_1, ..., u_5]
                right: [u_N, u_x(L)=0, u_xx(L)=0, u_{N-1}, ..., u_{N-4}]
    """
    deg = 6
    if side == "left":
        rows = [_vander_row(0.0, 0, deg), _vander_row(0.0, 1, deg)]
        rows += [_vander_row(k * dx, 0, deg) for k in range(1, N_LEFT + 1)]
    else:
        rows = [_vander_row(0.0, 0, deg), _vander_row(0.0, 1, deg), _vander_row(0.0, 2, deg)]
        rows += [_vander_row(-k * dx, 0, deg) for k in range(1, N_RIGHT + 1)]
    return np.linalg.inv(np.array(rows))


@lru_cache(maxsize=64)
def closure_weights(dx: float) -> dict[str, np.ndarray]:
    """Ghost-value weights.

    ``left``  (2, 6): ghosts at x = -dx, -2dx from [u_0, u_1, ..., u_5]
    ``right`` (2, 5): ghosts at x = L+dx, L+2dx from [u_N, u_{N-1}, ..., u_{N-4}]
    """
    inv_l = _closure_polynomial(dx, "left")
    inv_r = _closure_polynomial(dx, "right")
    left, right = [], []
    for g in (1, 2):
        wl = _vander_row(-g * dx, 0, 6) @ inv_l
        left.append(np.concatenate([[wl[0]], wl[2:]]))
        wr = _vander_row(g * dx, 0, 6) @ inv_r
        right.append(np.concatenate([[wr[0]], wr[3:]]))
    return {"left": np.array(left), "right": np.array(right)}


@lru_cache(maxsize=64)
def boundary_derivative_weights(dx: float, order: int) -> dict[str, np.ndarray]:
    """Weights giving d^order u/dx^order at x = 0 (over [u_0..u_5]) and x = L (over [u_N..u_{N-4}])."""
    inv_l = _closure_polynomial(dx, "left")
    inv_r = _closure_polynomial(dx, "right")
    wl = _vander_row(0.0, order, 6) @ inv_l
    wr = _vander_row(0.0, order, 6) @ inv_r
    return {
        "left": np.concatenate([[wl[0]], wl[2:]]),
        "right": np.concatenate([[wr[0]], wr[3:]]),
    }


def extend_x(f: np.ndarray, dx: float) -> np.ndarray:
    """Return f with two closure ghost rows on each x side, shape (nx+4, ny)."""
    w = closure_weights(dx)
    nx = f.shape[0]
    ext = np.empty((nx + 2 * N_GHOST,) + f.shape[1:])
    ext[N_GHOST:N_GHOST + nx] = f
    left_data = f[: N_LEFT + 1]                  # u_0..u_5
    right_data = f[::-1][: N_RIGHT + 1]          # u_N, u_{N-1}, ..., u_{N-4}
    gl = np.tensordot(w["left"], left_data, axes=1)
    gr = np.tensordot(w["right"], right_data, axes=1)
    ext[N_GHOST - 1] = gl[0]
    ext[N_GHOST - 2] = gl[1]
    ext[N_GHOST + nx] = gr[0]
    ext[N_GHOST + nx + 1] = gr[1]
    return ext


def _apply_stencil(ext: np.ndarray, order: int, spacing: float, n: int, offset: int) -> np.ndarray:
    coeffs = _STENCILS[order]
    half = len(coeffs) // 2
    out = np.zeros((n,) + ext.shape[1:])
    for k, c in enumerate(coeffs):
        if c != 0.0:
            start = offset - half + k
            out += c * ext[start:start + n]
    return out / spacing ** order


def diff(f: np.ndarray, grid: Grid, axis: str = "x", order: int = 1) -> np.ndarray:
    """Finite-difference derivative of a field.

    Supported: axis 'x' with order 1, 2, 3, 5; axis 'y' with order 2.
    """
    f = np.asarray(f, dtype=float)
    if axis == "y":
        if order != 2:
            raise ValueError(f"unsupported derivative: axis=y, order={order}")
        return _dyy(f, grid.dy)
    if axis != "x" or order not in (1, 2, 3, 5):
        raise ValueError(f"unsupported derivative: axis={axis}, order={order}")
    dx = grid.dx
    nx = f.shape[0]
    out = np.empty_like(f)
    if order in (1, 2):
        c = _STENCILS[order]
        out[1:-1] = sum(c[k] * f[k:k + nx - 2] for k in range(3)) / dx ** order
        if order == 1:
            out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * dx)
            out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * dx)
        else:
            out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / dx ** 2
            out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / dx ** 2
        return out
    ext = extend_x(f, dx)
    out[1:-1] = _apply_stencil(ext, order, dx, nx - 2, N_GHOST + 1)
    bw = boundary_derivative_weights(dx, order)
    out[0] = np.tensordot(bw["left"], f[: N_LEFT + 1], axes=1)
    out[-1] = np.tensordot(bw["right"], f[::-1][: N_RIGHT + 1], axes=1)
    return out


def _dyy(f: np.ndarray, dy: float) -> np.ndarray:
    out = np.empty_like(f)
    out[:, 1:-1] = (f[:, 2:] - 2 * f[:, 1:-1] + f[:, :-2]) / dy ** 2
    out[:, 0] = (2 * f[:, 0] - 5 * f[:, 1] + 4 * f[:, 2] - f[:, 3]) / dy ** 2
    out[:, -1] = (2 * f[:, -1] - 5 * f[:, -2] + 4 * f[:, -3] - f[:, -4]) / dy ** 2
    return out


def antideriv_x(f: np.ndarray, grid: Grid) -> np.ndarray:
    """psi(x_i, y) = -int_{x_i}^L f(s, y) ds by the composite trapezoid rule."""
    f = np.asarray(f, dtype=float)
    tail = cumulative_trapezoid(f[::-1], dx=grid.dx, axis=0, initial=0.0)[::-1]
    return -tail


def nonlocal_term(u: np.ndarray, grid: Grid, gamma: float = 1.0) -> np.ndarray:
    """gamma * d_x^{-1} d_y^2 u."""
    return gamma * antideriv_x(diff(u, grid, "y", 2), grid)


def nonlinear_flux(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Conservative flux 0.5 * d_x(u^2)."""
    return 0.5 * diff(u * u, grid, "x", 1)


def integral(f: np.ndarray, grid: Grid) -> float:
    """Composite trapezoid over the square, fixed summation order."""
    wx, wy = grid.trapezoid_weights()
    return float(wx @ np.asarray(f, dtype=float) @ wy)


# ----------------------------------------------------------------------------
# matrices acting on interior values (boundary values are zero)

@lru_cache(maxsize=32)
def x_derivative_matrix(nx: int, length: float, order: int) -> np.ndarray:
    """Dense (nx-2, nx-2) matrix of diff(., x, order) on fields vanishing at x = 0, L."""
    g = Grid(nx, 8, length)
    n = nx - 2
    basis = np.zeros((nx, n))
    basis[1:-1] = np.eye(n)
    mat = diff(basis, g, "x", order)[1:-1]
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=32)
def antideriv_matrix(nx: int, length: float) -> np.ndarray:
    """Trapezoid antiderivative on interior nodes for integrands vanishing at x = 0, L."""
    dx = length / (nx - 1)
    n = nx - 2
    mat = -dx * np.triu(np.ones((n, n)), 1) - 0.5 * dx * np.eye(n)
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=32)
def dyy_matrix(ny: int, length: float) -> np.ndarray:
    """Dirichlet three-point d^2/dy^2 on interior nodes."""
    dy = length / (ny - 1)
    n = ny - 2
    mat = (np.diag(np.full(n - 1, 1.0), -1) - 2 * np.eye(n) + np.diag(np.full(n - 1, 1.0), 1)) / dy ** 2
    mat.setflags(write=False)
    return mat


def bandwidths(mat: np.ndarray) -> tuple[int, int]:
    rows, cols = np.nonzero(mat)
    if rows.size == 0:
        return 0, 0
    return int(max(0, np.max(rows - cols))), int(max(0, np.max(cols - rows)))


@dataclass
class BandedXOperator:
    """Per-y-line factorization of ``I + theta*dt*(alpha*D3 + beta*D5 + diag(c))``.

    One banded LU (LAPACK gbtrf, partial pivoting) per interior y-line;
    ``matrices[j]`` keeps the unfactored dense line operator for checks.
    """

    grid: Grid
    theta: float
    dt: float
    kl: int
    ku: int
    matrices: np.ndarray
    _lu: list = field(repr=False, default_factory=list)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve on every interior y-line; accepts full-grid or interior arrays."""
        full = rhs.shape == self.grid.shape
        interior = rhs[1:-1, 1:-1] if full else rhs
        out = np.empty_like(interior, dtype=float)
        for j, (ab, piv) in enumerate(self._lu):
            x, info = dgbtrs(ab, self.kl, self.ku, interior[:, j], piv)
            if info != 0:
                raise np.linalg.LinAlgError(f"banded solve failed on y-line {j + 1} (info={info})")
            out[:, j] = x
        return self.grid.embed(out) if full else out

    def apply(self, u: np.ndarray) -> np.ndarray:
        full = u.shape == self.grid.shape
        interior = u[1:-1, 1:-1] if full else u
        out = np.einsum("jik,kj->ij", self.matrices, interior)
        return self.grid.embed(out) if full else out


def _to_band(mat: np.ndarray, kl: int, ku: int) -> np.ndarray:
    n = mat.shape[0]
    ab = np.zeros((2 * kl + ku + 1, n))
    for j in range(n):
        lo, hi = max(0, j - ku), min(n, j + kl + 1)
        ab[kl + ku + lo - j:kl + ku + hi - j, j] = mat[lo:hi, j]
    return ab


def x_line_operator(params, grid: Grid) -> np.ndarray:
    """alpha*D3 + beta*D5 on interior x-nodes."""
    return params.alpha * x_derivative_matrix(grid.nx, grid.length, 3) + params.beta * x_derivative_matrix(
        grid.nx, grid.length, 5
    )


def assemble_x_operator(params, grid: Grid, theta_im: float, dt: float, reaction: np.ndarray | None = None) -> BandedXOperator:
    """Factor ``I + theta_im*dt*(alpha*D3 + beta*D5 + reaction)`` for each interior y-line.

    ``reaction`` is an optional full-grid nonnegative field folded onto the
    diagonal (damping a(x, y), per line it is just a diagonal).
    """
    if not 0 < theta_im <= 1:
        raise ValueError("theta_im must lie in (0, 1]")
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = grid.nx - 2
    base = np.eye(n) + theta_im * dt * x_line_operator(params, grid)
    kl, ku = bandwidths(base - np.diag(np.diag(base)))
    kl, ku = max(kl, 1), max(ku, 1)
    mats = np.empty((grid.ny - 2, n, n))
    lu = []
    for j in range(grid.ny - 2):
        m = base.copy()
        if reaction is not None:
            m[np.diag_indices(n)] += theta_im * dt * reaction[1:-1, j + 1]
        mats[j] = m
        ab = _to_band(m, kl, ku)
        lub, piv, info = dgbtrf(ab, kl, ku)
        if info != 0:
            raise np.linalg.LinAlgError(f"singular implicit x-operator on y-line {j + 1} (info={info})")
        lu.append((lub, piv))
    return BandedXOperator(grid=grid, theta=theta_im, dt=dt, kl=kl, ku=ku, matrices=mats, _lu=lu)


def save_field_csv(path, f: np.ndarray, grid: Grid, header_comment: str | None = None) -> None:
    """Row-major CSV ``x,y,value`` with 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for i in range(grid.nx):
            for j in range(grid.ny):
                w.writerow([f"{grid.x[i]:.17g}", f"{grid.y[j]:.17g}", f"{f[i, j]:.17g}"])
