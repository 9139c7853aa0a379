"""Bath spectral density and the real/imaginary bath correlation integrals.

With hbar = 1 and frequencies in units of Delta the two correlators are

    S(tau) = (1/pi) int_0^inf dw J(w)/w^2 (1 - cos w tau) coth(w / 2T)
    R(tau) = (1/pi) int_0^inf dw J(w)/w^2 sin(w tau)

for J(w) = 2 pi alpha w^s exp(-w/w_c), so that the Ohmic zero-temperature
results are S = 2 alpha ln sqrt(1 + w_c^2 tau^2) and R = 2 alpha arctan(w_c tau).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import ConvergenceError, DomainError, ResourceError

# below this fraction of w_c the coth is replaced by its Laurent series
_COTH_SERIES_BELOW = 1e-8
_QUAD_EPSREL = 1e-11


@dataclass(frozen=True)
class BathSpec:
    """Power-law bath with exponential cutoff.

    Parameters
    ----------
    alpha : float
        Dimensionless dissipation strength, ``alpha >= 0``.
    s : float
        Spectral exponent, ``0 < s <= 2`` (``s = 1`` is Ohmic).
    omega_c : float
        Cutoff frequency in units of Delta.
    temperature : float
        ``k_B T`` in units of ``hbar Delta``; ``0`` means exactly zero.
    """

    alpha: float = 0.0
    s: float = 1.0
    omega_c: float = 10.0
    temperature: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "s", "omega_c", "temperature"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise DomainError(f"BathSpec.{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if self.alpha < 0:
            raise DomainError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 < self.s <= 2:
            raise DomainError(f"spectral exponent s must lie in (0, 2], got {self.s}")
        if self.omega_c <= 0:
            raise DomainError(f"omega_c must be > 0, got {self.omega_c}")
        if self.temperature < 0:
            raise DomainError(f"temperature must be >= 0, got {self.temperature}")

    @property
    def ohmic(self) -> bool:
        return self.s == 1.0


def spectral_density(spec: BathSpec, omega):
    """J(w) = 2 pi alpha w^s exp(-w / w_c) for ``w >= 0``."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise DomainError("spectral density is defined for omega >= 0 only")
    out = 2.0 * np.pi * spec.alpha * w**spec.s * np.exp(-w / spec.omega_c)
    return out if out.ndim else float(out)


def _coth_half(w, temperature):
    """coth(w / 2T) for w > 0 with the small-argument series near zero."""
    x = w / (2.0 * temperature)
    small = x < 0.5 * _COTH_SERIES_BELOW
    with np.errstate(divide="ignore", over="ignore"):
        out = np.where(small, 1.0 / np.where(small, x, 1.0) + x / 3.0, 1.0 / np.tanh(x))
    return out


def _s_zero_temperature(spec: BathSpec, tau):
    x = spec.omega_c * tau
    if spec.ohmic:
        return spec.alpha * np.log1p(x * x)
    # 2 alpha Gamma(s-1) w_c^(s-1) [1 - Re (1 - i x)^(1-s)], written with
    # expm1 so that s -> 1 stays free of cancellation
    a = 0.5 * (1.0 - spec.s) * np.log1p(x * x)
    b = (spec.s - 1.0) * np.arctan(x)
    one_minus_re = -np.expm1(a) * np.cos(b) + 2.0 * np.sin(0.5 * b) ** 2
    return 2.0 * spec.alpha * special.gamma(spec.s - 1.0) * spec.omega_c ** (spec.s - 1.0) * one_minus_re


def _s_ohmic_thermal(spec: BathSpec, tau):
    # coth = 1 + 2 sum_m exp(-m w / T) turns the integral into a product
    # that sums to a ratio of Gamma functions.
    b = spec.temperature / spec.omega_c
    y = spec.temperature * tau
    log_ratio = 2.0 * special.gammaln(1.0 + b) - 2.0 * np.real(special.loggamma(1.0 + b + 1j * y))
    return spec.alpha * np.log1p((spec.omega_c * tau) ** 2) + 2.0 * spec.alpha * log_ratio


def _s_thermal_quad(spec: BathSpec, tau: float) -> float:
    if tau == 0.0:
        return 0.0
    alpha, s, wc, temp = spec.alpha, spec.s, spec.omega_c, spec.temperature

    def weight(w):
        return w ** (s - 2.0) * math.exp(-w / wc) * float(_coth_half(w, temp))

    def full(w):
        if w == 0.0:
            return 0.0
        return weight(w) * 2.0 * math.sin(0.5 * w * tau) ** 2

    split = min(1.0 / tau, 50.0 * wc)
    head, err_head = integrate.quad(full, 0.0, split, epsabs=0.0, epsrel=_QUAD_EPSREL, limit=500)
    plain, err_plain = integrate.quad(weight, split, np.inf, epsabs=0.0, epsrel=_QUAD_EPSREL, limit=500)
    osc, err_osc = integrate.quad(weight, split, np.inf, weight="cos", wvar=tau, limlst=200)
    value = head + plain - osc
    err = err_head + err_plain + abs(err_osc)
    if not math.isfinite(value) or err > 1e-6 * max(abs(value), 1e-300) + 1e-14:
        raise ConvergenceError(
            f"S(tau={tau}) quadrature did not converge for s={s}, T={temp}: value={value}, error={err}"
        )
    return 2.0 * alpha * value


def correlator_s(spec: BathSpec, tau):
    """Real part S(tau) of the bath correlation integral.

    Even in ``tau`` and non-negative. Closed forms are used at zero
    temperature and for the Ohmic bath at any temperature; other thermal
    cases go through adaptive quadrature.
    """
    t = np.abs(np.asarray(tau, dtype=float))
    if spec.alpha == 0.0:
        out = np.zeros_like(t)
    elif spec.temperature == 0.0:
        out = _s_zero_temperature(spec, t)
    elif spec.ohmic:
        out = _s_ohmic_thermal(spec, t)
    else:
        out = np.vectorize(lambda x: _s_thermal_quad(spec, float(x)), otypes=[float])(t)
    out = np.where(t == 0.0, 0.0, np.maximum(out, 0.0))
    return out if out.ndim else float(out)


def correlator_r(spec: BathSpec, tau):
    """Imaginary part R(tau); odd in ``tau`` and independent of temperature."""
    t = np.asarray(tau, dtype=float)
    x = spec.omega_c * np.abs(t)
    if spec.alpha == 0.0:
        mag = np.zeros_like(x)
    elif spec.ohmic:
        mag = 2.0 * spec.alpha * np.arctan(x)
    else:
        b = (spec.s - 1.0) * np.arctan(x)
        a = 0.5 * (1.0 - spec.s) * np.log1p(x * x)
        mag = 2.0 * spec.alpha * special.gamma(spec.s - 1.0) * spec.omega_c ** (spec.s - 1.0) * np.exp(a) * np.sin(b)
    out = np.sign(t) * mag
    return out if out.ndim else float(out)


def _cubic_weights(grid: np.ndarray, x: np.ndarray):
    """Stencil start and four-point Lagrange weights on a nonuniform grid."""
    n = grid.size
    i = np.clip(np.searchsorted(grid, x, side="right") - 2, 0, n - 4)
    x0, x1, x2, x3 = grid[i], grid[i + 1], grid[i + 2], grid[i + 3]
    d0, d1, d2, d3 = x - x0, x - x1, x - x2, x - x3
    return i, (
        d1 * d2 * d3 / ((x0 - x1) * (x0 - x2) * (x0 - x3)),
        d0 * d2 * d3 / ((x1 - x0) * (x1 - x2) * (x1 - x3)),
        d0 * d1 * d3 / ((x2 - x0) * (x2 - x1) * (x2 - x3)),
        d0 * d1 * d2 / ((x3 - x0) * (x3 - x1) * (x3 - x2)),
    )


def _uniform_weights(u: np.ndarray, step: float, n: int):
    """Same weights when the grid is uniform in ``u``; no search needed."""
    p = u / step
    i = np.clip(np.floor(p).astype(np.intp) - 1, 0, n - 4)
    f = p - i
    f1, f2, f3 = f - 1.0, f - 2.0, f - 3.0
    return i, (
        -f1 * f2 * f3 / 6.0,
        0.5 * f * f2 * f3,
        -0.5 * f * f1 * f3,
        f * f1 * f2 / 6.0,
    )


def _apply(values: np.ndarray, i, w) -> np.ndarray:
    return values[i] * w[0] + values[i + 1] * w[1] + values[i + 2] * w[2] + values[i + 3] * w[3]


def _cubic_interp(grid: np.ndarray, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    i, w = _cubic_weights(grid, x)
    return _apply(values, i, w)


def sinh_grid(tau_max: float, tau_scale: float, points: int) -> np.ndarray:
    """Grid ``tau_k = tau_scale * sinh(k h)``: dense near zero, geometric far out."""
    u = np.linspace(0.0, math.asinh(tau_max / tau_scale), points)
    grid = tau_scale * np.sinh(u)
    grid[-1] = tau_max
    return grid


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Tabulated S(tau), R(tau) on ``[0, tau_max]`` with cubic interpolation.

    Lookups accept any real lag; negative lags use the even (S) and odd (R)
    extensions. Arrays are frozen after construction.

    When ``tau_scale`` is given the grid must be :func:`sinh_grid` with that
    scale; lookups then locate the stencil in constant time.
    """

    tau_grid: np.ndarray
    s_values: np.ndarray
    r_values: np.ndarray
    interpolation_order: int = 3
    tau_scale: float | None = None
    is_zero: bool = field(default=False)

    def __post_init__(self):
        grid = np.array(self.tau_grid, dtype=float)
        s_vals = np.array(self.s_values, dtype=float)
        r_vals = np.array(self.r_values, dtype=float)
        if grid.ndim != 1 or grid.size < 4:
            raise DomainError("kernel table needs at least 4 grid points")
        if grid.shape != s_vals.shape or grid.shape != r_vals.shape:
            raise DomainError("kernel table arrays must share one shape")
        if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise DomainError("kernel grid must start at 0 and be strictly increasing")
        if s_vals[0] != 0.0 or r_vals[0] != 0.0:
            raise DomainError("S(0) and R(0) must vanish")
        if np.any(s_vals < 0):
            raise DomainError("S values must be non-negative")
        if self.interpolation_order != 3:
            raise DomainError("only cubic interpolation is implemented")
        if self.tau_scale is not None:
            if not self.tau_scale > 0:
                raise DomainError(f"tau_scale must be > 0, got {self.tau_scale}")
            expected = sinh_grid(grid[-1], self.tau_scale, grid.size)
            if not np.allclose(grid, expected, rtol=1e-12, atol=0.0):
                raise DomainError("grid does not match the sinh layout for tau_scale")
            object.__setattr__(self, "tau_scale", float(self.tau_scale))
        for arr in (grid, s_vals, r_vals):
            arr.setflags(write=False)
        object.__setattr__(self, "tau_grid", grid)
        object.__setattr__(self, "s_values", s_vals)
        object.__setattr__(self, "r_values", r_vals)
        object.__setattr__(self, "is_zero", bool(not s_vals.any() and not r_vals.any()))

    @property
    def tau_max(self) -> float:
        return float(self.tau_grid[-1])

    def _weights(self, t: np.ndarray):
        if self.tau_scale is None:
            return _cubic_weights(self.tau_grid, t)
        n = self.tau_grid.size
        step = math.asinh(self.tau_max / self.tau_scale) / (n - 1)
        return _uniform_weights(np.arcsinh(t / self.tau_scale), step, n)

    def _lookup(self, values, tau):
        t = np.abs(np.asarray(tau, dtype=float))
        if t.size and t.max() > self.tau_max * (1.0 + 1e-12):
            raise DomainError(f"lag {t.max()} exceeds kernel table range {self.tau_max}")
        if self.is_zero:
            return np.zeros_like(t)
        return _apply(values, *self._weights(t))

    def s(self, tau):
        out = self._lookup(self.s_values, tau)
        return out if out.ndim else float(out)

    def r(self, tau):
        t = np.asarray(tau, dtype=float)
        out = np.sign(t) * self._lookup(self.r_values, t)
        return out if out.ndim else float(out)

    def both(self, tau):
        """``(S(tau), R(tau))`` for non-negative lags, sharing one stencil lookup."""
        t = np.asarray(tau, dtype=float)
        if t.size and (t.min() < 0 or t.max() > self.tau_max * (1.0 + 1e-12)):
            raise DomainError(f"lags must lie in [0, {self.tau_max}]")
        if self.is_zero:
            return np.zeros_like(t), np.zeros_like(t)
        i, w = self._weights(t)
        return _apply(self.s_values, i, w), _apply(self.r_values, i, w)

    @classmethod
    def zeros(cls, tau_max: float) -> "KernelTable":
        grid = np.linspace(0.0, tau_max, 5)
        return cls(grid, np.zeros(5), np.zeros(5))

    @classmethod
    def from_functions(
        cls,
        s_fn: Callable[[np.ndarray], np.ndarray],
        r_fn: Callable[[np.ndarray], np.ndarray],
        tau_max: float,
        tolerance: float,
        *,
        scale: float = 1.0,
        max_points: int = 200_000,
    ) -> "KernelTable":
        """Tabulate arbitrary correlator callables on a :func:`sinh_grid`.

        The point count doubles until the interpolant reproduces both
        functions to ``tolerance`` (absolute) at every interval midpoint.
        ``scale`` is the shortest feature time of the correlators.
        """
        if not tau_max > 0:
            raise DomainError(f"tau_max must be > 0, got {tau_max}")
        if not tolerance > 0:
            raise DomainError(f"tolerance must be > 0, got {tolerance}")
        tau_scale = min(scale, tau_max)
        points = 65
        while True:
            grid = sinh_grid(tau_max, tau_scale, points)
            s_vals = np.asarray(s_fn(grid), dtype=float)
            r_vals = np.asarray(r_fn(grid), dtype=float)
            s_vals[0] = r_vals[0] = 0.0
            table = cls(grid, np.maximum(s_vals, 0.0), r_vals, tau_scale=tau_scale)
            mids = 0.5 * (grid[:-1] + grid[1:])
            s_fit, r_fit = table.both(mids)
            err = max(
                np.max(np.abs(s_fit - np.asarray(s_fn(mids), dtype=float))),
                np.max(np.abs(r_fit - np.asarray(r_fn(mids), dtype=float))),
            )
            if err <= tolerance:
                return table
            points = 2 * points - 1
            if points > max_points:
                raise ResourceError(
                    f"kernel table needs more than {max_points} points for tolerance {tolerance}"
                )


    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["tau", "S", "R"])
            for row in zip(self.tau_grid, self.s_values, self.r_values):
                writer.writerow([repr(float(v)) for v in row])


def build_kernel_table(
    spec: BathSpec, tau_max: float, tolerance: float = 1e-8, *, max_points: int = 200_000
) -> KernelTable:
    """Tabulate S and R for ``spec`` on ``[0, tau_max]`` to ``tolerance``."""
    if not tau_max > 0:
        raise DomainError(f"tau_max must be > 0, got {tau_max}")
    if not tolerance > 0:
        raise DomainError(f"tolerance must be > 0, got {tolerance}")
    if spec.alpha == 0.0:
        return KernelTable.zeros(tau_max)
    return KernelTable.from_functions(
        lambda t: correlator_s(spec, t),
        lambda t: correlator_r(spec, t),
        tau_max,
        tolerance,
        scale=1.0 / spec.omega_c,
        max_points=max_points,
    )
