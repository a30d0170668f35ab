"""Exact-shift history buffer for z(x, y, rho, t) = u(x, y, t - rho*h).

The rho-grid rho_k = k / n_rho is tied to the time step via h = n_rho * dt, so
the transport equation h z_t + z_rho = 0 is solved exactly along
characteristics: one time step moves every slice one index toward rho = 1.
Storage is a ring of n_rho + 1 arrays; advancing never copies the history.
"""

from __future__ import annotations

import csv

import numpy as np


class DelayLine:
    def __init__(self, buffer: np.ndarray, delay: float, dt: float, head: int = 0):
        n_rho = buffer.shape[0] - 1
        if n_rho < 1:
            raise ValueError("a delay line needs at least one rho interval")
        if abs(delay - n_rho * dt) > 1e-12 * max(1.0, delay):
            raise ValueError(f"delay {delay!r} != n_rho*dt = {n_rho}*{dt!r}")
        self._buf = buffer
        self._head = head
        self.delay = float(delay)
        self.dt = float(dt)
        self.last_discarded: np.ndarray | None = None

    # -- construction -----------------------------------------------------
    @classmethod
    def init(cls, z0, shape: tuple[int, int], n_rho: int, delay: float, dt: float,
             u0: np.ndarray | None = None) -> "DelayLine":
        """Build from a history spec.

        ``z0`` is a scalar (constant history), a single field (constant in rho),
        or a sequence of n_rho + 1 fields indexed by rho_k. If ``u0`` is given it
        replaces slice 0, enforcing z(., 0, t) = u(t).
        """
        buf = np.empty((n_rho + 1,) + tuple(shape))
        if np.isscalar(z0):
            buf[:] = float(z0)
        elif isinstance(z0, np.ndarray) and z0.shape == tuple(shape):
            buf[:] = z0
        else:
            fields = list(z0)
            if len(fields) != n_rho + 1:
                raise ValueError(f"history needs {n_rho + 1} slices, got {len(fields)}")
            for k, f in enumerate(fields):
                f = np.asarray(f, dtype=float)
                if f.shape != tuple(shape):
                    raise ValueError(f"history slice {k} has shape {f.shape}, expected {tuple(shape)}")
                buf[k] = f
        if u0 is not None:
            buf[0] = u0
        if not np.all(np.isfinite(buf)):
            raise ValueError("history contains non-finite values")
        return cls(buf, delay, dt)

    @property
    def n_rho(self) -> int:
        return self._buf.shape[0] - 1

    @property
    def rho(self) -> np.ndarray:
        return np.arange(self.n_rho + 1) / self.n_rho

    def _index(self, k: int) -> int:
        return (self._head + k) % (self.n_rho + 1)

    def slice(self, k: int) -> np.ndarray:
        """Slice at rho_k (a view; do not modify)."""
        if not 0 <= k <= self.n_rho:
            raise IndexError(k)
        return self._buf[self._index(k)]

    def slices(self) -> np.ndarray:
        """All slices ordered by rho, shape (n_rho+1, nx, ny) (a copy)."""
        order = [self._index(k) for k in range(self.n_rho + 1)]
        return self._buf[order]

    # -- evolution ----------------------------------------------------------
    def advance(self, u_new: np.ndarray) -> "DelayLine":
        """Shift every slice one index toward rho = 1 and store ``u_new`` at rho = 0."""
        self._head = (self._head - 1) % (self.n_rho + 1)
        self.last_discarded = self._buf[self._head].copy()
        self._buf[self._head] = u_new
        return self

    def sample(self, rho: float) -> np.ndarray:
        """Slice at the rho_k nearest to ``rho``; sample(1) is u(t - h)."""
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {rho!r}")
        return self.slice(int(np.floor(rho * self.n_rho + 0.5)))

    def copy(self) -> "DelayLine":
        dl = DelayLine(self._buf.copy(), self.delay, self.dt, self._head)
        dl.last_discarded = None if self.last_discarded is None else self.last_discarded.copy()
        return dl

    def dump_csv(self, path, x: np.ndarray, y: np.ndarray, header_comment: str | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["rho", "x", "y", "value"])
            for k, r in enumerate(self.rho):
                z = self.slice(k)
                for i, xi in enumerate(x):
                    for j, yj in enumerate(y):
                        w.writerow([f"{r:.17g}", f"{xi:.17g}", f"{yj:.17g}", f"{z[i, j]:.17g}"])


def transport_residual(dl_prev: DelayLine, dl_next: DelayLine, dt: float) -> float:
    """max over rho_k (k >= 1) and nodes of |h (z_next - z_prev)/dt + D_rho z_prev|.

    D_rho is the upwind difference n_rho (z_k - z_{k-1}); the exact shift
    z_next_k = z_prev_{k-1} makes the residual vanish up to rounding.
    """
    if dl_prev.n_rho != dl_next.n_rho or dl_prev.slice(0).shape != dl_next.slice(0).shape:
        raise ValueError("delay lines have mismatched shapes")
    n = dl_prev.n_rho
    zp = dl_prev.slices()
    zn = dl_next.slices()
    res = dl_prev.delay * (zn[1:] - zp[1:]) / dt + n * (zp[1:] - zp[:-1])
    return float(np.max(np.abs(res))) if res.size else 0.0


def history_from_function(func, grid, n_rho: int, delay: float) -> list[np.ndarray]:
    """Slices z0(x, y, rho_k) = func(x, y, -rho_k * h) for a past-time history."""
    return [np.asarray(func(grid.X, grid.Y, -k / n_rho * delay), dtype=float) for k in range(n_rho + 1)]
