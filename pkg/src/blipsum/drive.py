"""Drive protocols, the two-level system, and the work functionals on spin paths.

The total bias is ``epsilon0 + epsilon_d(t)`` with ``epsilon_d(0) = 0``; any
offset at ``t = 0`` belongs in ``epsilon0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ExtrapolationError

KINDS = ("none", "constant", "pulse", "sinusoidal", "table")

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


@dataclass(frozen=True)
class SystemSpec:
    """Biased two-level system ``H_S = -(delta/2) sx - (eps_T(t)/2) sz``.

    The initial state is always the left-well state ``|L>``.
    """

    delta: float = 1.0
    epsilon0: float = 0.0
    initial_state: str = "L"

    def __post_init__(self):
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "epsilon0", float(self.epsilon0))
        if not (math.isfinite(self.delta) and math.isfinite(self.epsilon0)):
            raise DomainError("delta and epsilon0 must be finite")
        # delta = 0 is accepted as the trivially non-tunneling limit
        if self.delta < 0:
            raise DomainError(f"delta must be >= 0, got {self.delta}")
        if self.initial_state != "L":
            raise DomainError("only the left-well initial state 'L' is supported")


@dataclass(frozen=True)
class DriveProtocol:
    """Time-dependent bias ``epsilon_d(t)`` with its exact integral ``g(t)``.

    Use the named constructors rather than the raw fields.

    ``constant``
        ``amplitude`` for ``t > 0``, zero at ``t = 0``.
    ``pulse``
        ``amplitude`` on ``[t_on, t_off)``, zero elsewhere.
    ``sinusoidal``
        ``amplitude * sin(frequency * t + phase)``; ``phase`` must be a multiple
        of pi and is folded into the sign of ``amplitude``.
    ``table``
        piecewise-linear through ``(knots_t, knots_eps)``, first knot at 0.
    """

    kind: str = "none"
    amplitude: float = 0.0
    frequency: float = 0.0
    phase: float = 0.0
    t_on: float = 0.0
    t_off: float = 0.0
    knots_t: tuple = ()
    knots_eps: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown drive kind {self.kind!r}; expected one of {KINDS}")
        for name in ("amplitude", "frequency", "phase", "t_on", "t_off"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise DomainError(f"drive {name} must be finite")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "knots_t", tuple(float(v) for v in self.knots_t))
        object.__setattr__(self, "knots_eps", tuple(float(v) for v in self.knots_eps))
        if self.kind == "pulse" and not 0.0 < self.t_on < self.t_off:
            raise DomainError(f"pulse needs 0 < t_on < t_off, got t_on={self.t_on}, t_off={self.t_off}")
        if self.kind == "sinusoidal":
            if self.frequency <= 0:
                raise DomainError("sinusoidal drive needs frequency > 0")
            if abs(self.amplitude * math.sin(self.phase)) > 1e-14 * max(1.0, abs(self.amplitude)):
                raise DomainError("sinusoidal drive must vanish at t = 0 (phase must be a multiple of pi)")
            # fold the phase into the amplitude so that epsilon_d(0) is exactly 0
            if self.amplitude != 0.0:
                turns = round(self.phase / math.pi)
                object.__setattr__(self, "amplitude", self.amplitude * (-1.0) ** turns)
            object.__setattr__(self, "phase", 0.0)
        if self.kind == "table":
            ts = np.asarray(self.knots_t)
            if ts.size < 2 or ts.size != len(self.knots_eps):
                raise DomainError("drive table needs at least two (t, epsilon_d) knots of equal length")
            if ts[0] != 0.0:
                raise DomainError("drive table must start at t = 0")
            if np.any(np.diff(ts) <= 0):
                raise DomainError("drive table knots must be strictly increasing")
            if self.knots_eps[0] != 0.0:
                raise DomainError("drive table must have epsilon_d(0) = 0")
            if not np.all(np.isfinite(self.knots_eps)):
                raise DomainError("drive table values must be finite")

    # -- constructors -------------------------------------------------------

    @classmethod
    def none(cls) -> "DriveProtocol":
        return cls("none")

    @classmethod
    def constant(cls, amplitude: float) -> "DriveProtocol":
        return cls("constant", amplitude=amplitude)

    @classmethod
    def pulse(cls, amplitude: float, t_on: float, t_off: float) -> "DriveProtocol":
        return cls("pulse", amplitude=amplitude, t_on=t_on, t_off=t_off)

    @classmethod
    def sinusoidal(cls, amplitude: float, frequency: float, phase: float = 0.0) -> "DriveProtocol":
        return cls("sinusoidal", amplitude=amplitude, frequency=frequency, phase=phase)

    @classmethod
    def table(cls, t: Sequence[float], epsilon_d: Sequence[float]) -> "DriveProtocol":
        return cls("table", knots_t=tuple(t), knots_eps=tuple(epsilon_d))

    @classmethod
    def from_csv(cls, path) -> "DriveProtocol":
        """Read a two-column ``t, epsilon_d`` CSV (an optional header row is skipped)."""
        ts, eps = [], []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    t_val, e_val = float(row[0]), float(row[1])
                except (ValueError, IndexError):
                    if lineno == 1:
                        continue
                    raise DomainError(f"{path}:{lineno}: expected two numeric columns")
                ts.append(t_val)
                eps.append(e_val)
        return cls.table(ts, eps)

    # -- evaluation ---------------------------------------------------------

    @property
    def t_end(self) -> float:
        return self.knots_t[-1] if self.kind == "table" else math.inf

    def breakpoints(self) -> np.ndarray:
        """Times where the bias or its derivative is not smooth."""
        if self.kind == "constant":
            return np.array([0.0])
        if self.kind == "pulse":
            return np.array([self.t_on, self.t_off])
        if self.kind == "table":
            return np.asarray(self.knots_t)
        return np.zeros(0)

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("drive evaluated at negative time")
        if self.kind == "table" and np.any(t > self.t_end * (1.0 + 1e-14)):
            raise ExtrapolationError(f"time {t.max()} beyond drive table range {self.t_end}")
        return t

    def _segment(self, t):
        ts = np.asarray(self.knots_t)
        i = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, ts.size - 2)
        slope = np.diff(self.knots_eps) / np.diff(ts)
        return i, ts, np.asarray(self.knots_eps), slope

    def bias(self, t):
        t = self._check(t)
        A = self.amplitude
        if self.kind == "none":
            out = np.zeros_like(t)
        elif self.kind == "constant":
            out = np.where(t > 0, A, 0.0)
        elif self.kind == "pulse":
            out = np.where((t >= self.t_on) & (t < self.t_off), A, 0.0)
        elif self.kind == "sinusoidal":
            out = A * np.sin(self.frequency * t + self.phase)
        else:
            i, ts, eps, slope = self._segment(t)
            out = eps[i] + slope[i] * (t - ts[i])
        return out if out.ndim else float(out)

    def integral(self, t):
        """Exact ``g(t) = int_0^t epsilon_d``; trapezoidal (hence exact) for tables."""
        t = self._check(t)
        A = self.amplitude
        if self.kind == "none":
            out = np.zeros_like(t)
        elif self.kind == "constant":
            out = A * t
        elif self.kind == "pulse":
            out = A * np.clip(t - self.t_on, 0.0, self.t_off - self.t_on)
        elif self.kind == "sinusoidal":
            w, ph = self.frequency, self.phase
            # cos(ph) - cos(w t + ph) written as a product to avoid cancellation at small t
            out = (A / w) * 2.0 * np.sin(0.5 * w * t + ph) * np.sin(0.5 * w * t)
        else:
            i, ts, eps, slope = self._segment(t)
            cum = np.concatenate([[0.0], np.cumsum(0.5 * (eps[1:] + eps[:-1]) * np.diff(ts))])
            dt = t - ts[i]
            out = cum[i] + eps[i] * dt + 0.5 * slope[i] * dt * dt
        return out if out.ndim else float(out)

    def rate(self, t):
        """Pointwise derivative of the bias, ignoring jumps."""
        t = self._check(t)
        if self.kind == "sinusoidal":
            out = self.amplitude * self.frequency * np.cos(self.frequency * t + self.phase)
        elif self.kind == "table":
            i, _, _, slope = self._segment(t)
            out = slope[i]
        else:
            out = np.zeros_like(t)
        return out if out.ndim else float(out)

    def integrate_bias(self, a, b):
        """Gauss-Legendre quadrature of the bias over ``[a, b]`` split at breakpoints.

        Independent of :meth:`integral`; used by the work-functional route.
        ``a`` and ``b`` broadcast together.
        """
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        bp = self.breakpoints()
        edges = np.concatenate(
            [a[..., None], np.clip(np.broadcast_to(bp, a.shape + bp.shape), a[..., None], b[..., None]), b[..., None]],
            axis=-1,
        )
        edges = np.sort(edges, axis=-1)
        lo, hi = edges[..., :-1], edges[..., 1:]
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        nodes = mid[..., None] + half[..., None] * _GL_NODES
        vals = self.bias(nodes)
        out = np.sum(half * np.tensordot(vals, _GL_WEIGHTS, axes=([-1], [0])), axis=-1)
        return out if out.ndim else float(out)


def bias_at(p: DriveProtocol, t):
    return p.bias(t)


def g_integral(p: DriveProtocol, t):
    return p.integral(t)


def w_ns_rate(p: DriveProtocol, xi_j: int, t):
    """Nonstationary work rate of blip ``j``: ``-xi_j * epsilon_d(t)``."""
    if xi_j not in (-1, 1):
        raise DomainError(f"blip sign must be +1 or -1, got {xi_j}")
    return -xi_j * p.bias(t)


def w1_work(p: DriveProtocol, xi_1: int, t):
    """Single-blip work ``W_1(t) = -xi_1 epsilon_d(t)`` (uses ``epsilon_d(0) = 0``)."""
    if xi_1 not in (-1, 1):
        raise DomainError(f"blip sign must be +1 or -1, got {xi_1}")
    if np.any(np.asarray(t) < 0):
        raise DomainError("w1_work needs t >= 0")
    return -xi_1 * p.bias(t)


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-constant spin path on ``[edges[0], edges[-1]]``.

    On interval ``m`` the path is either a sojourn (``eta[m] = +-1``,
    ``xi[m] = 0``) or a blip (``eta[m] = 0``, ``xi[m] = +-1``).
    """

    edges: np.ndarray
    eta: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        eta = np.asarray(self.eta, dtype=int)
        xi = np.asarray(self.xi, dtype=int)
        if edges.ndim != 1 or eta.shape != (edges.size - 1,) or xi.shape != eta.shape:
            raise DomainError("trajectory needs len(edges) - 1 == len(eta) == len(xi)")
        if np.any(np.diff(edges) < 0):
            raise DomainError("trajectory edges must be non-decreasing")
        if not (np.isin(eta, (-1, 0, 1)).all() and np.isin(xi, (-1, 0, 1)).all()):
            raise DomainError("eta and xi take values in {-1, 0, +1}")
        if np.any((eta == 0) == (xi == 0)):
            raise DomainError("exactly one of eta, xi must be nonzero on each interval")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "xi", xi)

    @property
    def sigma_z(self) -> np.ndarray:
        """Per-interval spin value in the ``sigma_z = 2 (eta + xi)`` bookkeeping."""
        return 2 * (self.eta + self.xi)


def trajectory_from_path(path, t_final: float, eta_final: int = 1) -> Trajectory:
    """Lay a :class:`~blipsum.kernels.BlipPath` out on ``[0, t_final]``.

    The final sojourn after the last blip carries ``eta_final`` (``+1`` for
    a path ending in the right well).
    """
    times = np.asarray(path.times, dtype=float)
    if times.size and times[-1] > t_final:
        raise DomainError("path extends beyond t_final")
    edges = np.concatenate([[0.0], times, [t_final]])
    eta = np.zeros(2 * path.n + 1, dtype=int)
    xi = np.zeros(2 * path.n + 1, dtype=int)
    eta[0::2] = list(path.eta) + [eta_final]
    xi[1::2] = path.xi
    return Trajectory(edges, eta, xi)


def classical_work_split(p: DriveProtocol, trajectory: Trajectory) -> tuple[float, float]:
    """Split the classical work on a spin path into ``(W_qs, W_ns)``.

    ``W_qs = -int eta d(epsilon_d)`` and ``W_ns = -int xi d(epsilon_d)``,
    evaluated interval by interval as ``epsilon_d(b) - epsilon_d(a)`` so
    that jumps of the bias need no delta functions.
    """
    edges = trajectory.edges
    if edges[0] != 0.0:
        raise DomainError("trajectory must start at t = 0")
    if edges[-1] > p.t_end:
        raise DomainError(f"trajectory ends at {edges[-1]}, beyond the drive range {p.t_end}")
    increments = np.diff(p.bias(edges))
    w_qs = -math.fsum(trajectory.eta * increments)
    w_ns = -math.fsum(trajectory.xi * increments)
    return w_qs, w_ns
