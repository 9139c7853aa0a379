"""Influence-functional factors for blip/sojourn paths.

Time labels follow the path-sum convention: ``t_1 < ... < t_2n`` are the
flip times, blip ``j`` occupies ``[t_{2j-1}, t_{2j}]`` and sojourn ``k``
occupies ``[t_{2k}, t_{2k+1}]`` with ``t_0 = 0`` the preparation time.

The scalar functions take a single :class:`BlipPath`; the ``batch_*``
functions take an array of shape ``(B, 2n)`` of flip times and are what the
engine uses.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bath import KernelTable
from .drive import DriveProtocol, SystemSpec
from .errors import DomainError


@dataclass(frozen=True)
class BlipPath:
    """One discrete path: ``2n`` flip times, blip signs ``xi``, sojourn signs ``eta``.

    ``eta[0]`` is the initial sojourn and is always ``-1`` (left well).
    Times must be non-decreasing; coincident times describe zero-length
    blips or sojourns.
    """

    times: tuple
    xi: tuple
    eta: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        xi = tuple(int(v) for v in self.xi)
        eta = tuple(int(v) for v in self.eta)
        n = len(xi)
        if n < 1:
            raise DomainError("a blip path needs at least one blip")
        if len(times) != 2 * n or len(eta) != n:
            raise DomainError(f"expected {2 * n} times and {n} sojourn signs for {n} blips")
        if times[0] < 0 or any(b < a for a, b in zip(times, times[1:])):
            raise DomainError("flip times must be non-negative and non-decreasing")
        if any(v not in (-1, 1) for v in xi + eta):
            raise DomainError("blip and sojourn signs must be +1 or -1")
        if eta[0] != -1:
            raise DomainError("the initial sojourn sign must be -1 (left well)")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "eta", eta)

    @property
    def n(self) -> int:
        return len(self.xi)

    def t(self, i: int) -> float:
        """Flip time ``t_i`` with ``t_0 = 0``."""
        return 0.0 if i == 0 else self.times[i - 1]


@dataclass(frozen=True)
class InfluenceFactors:
    q_n: float
    h_n_phase: float
    phi_n: float


def lambda_jk(table: KernelTable, path: BlipPath, j: int, k: int) -> float:
    """Blip-blip interaction for ``1 <= k < j <= n``."""
    if not 1 <= k < j <= path.n:
        raise DomainError(f"lambda_jk needs 1 <= k < j <= {path.n}, got j={j}, k={k}")
    t = path.t
    return (
        table.s(t(2 * j) - t(2 * k - 1))
        + table.s(t(2 * j - 1) - t(2 * k))
        - table.s(t(2 * j) - t(2 * k))
        - table.s(t(2 * j - 1) - t(2 * k - 1))
    )


def x_jk(table: KernelTable, path: BlipPath, j: int, k: int) -> float:
    """Blip-sojourn interaction for ``0 <= k <= j - 1``."""
    if not (1 <= j <= path.n and 0 <= k <= j - 1):
        raise DomainError(f"x_jk needs 1 <= j <= {path.n} and 0 <= k < j, got j={j}, k={k}")
    t = path.t
    return (
        table.r(t(2 * j) - t(2 * k + 1))
        + table.r(t(2 * j - 1) - t(2 * k))
        - table.r(t(2 * j) - t(2 * k))
        - table.r(t(2 * j - 1) - t(2 * k + 1))
    )


def q_amplitude(table: KernelTable, path: BlipPath, *, zero_lambda: bool = False) -> float:
    terms = [-table.s(path.t(2 * j) - path.t(2 * j - 1)) for j in range(1, path.n + 1)]
    if not zero_lambda:
        for j in range(2, path.n + 1):
            for k in range(1, j):
                terms.append(-path.xi[j - 1] * path.xi[k - 1] * lambda_jk(table, path, j, k))
    return math.exp(math.fsum(terms))


def h_phase(table: KernelTable, path: BlipPath, *, nearest_sojourn_only: bool = False) -> float:
    """Phase ``sum_j sum_{k<j} xi_j eta_k X_jk`` of the sojourn factor."""
    terms = []
    for j in range(1, path.n + 1):
        ks = (j - 1,) if nearest_sojourn_only else range(j)
        for k in ks:
            terms.append(path.xi[j - 1] * path.eta[k] * x_jk(table, path, j, k))
    return math.fsum(terms)


def phi_phase(drive: DriveProtocol, system: SystemSpec, path: BlipPath) -> float:
    """Bias phase accumulated on the blips, through ``g`` differences."""
    terms = []
    for j in range(1, path.n + 1):
        a, b = path.t(2 * j - 1), path.t(2 * j)
        terms.append(path.xi[j - 1] * system.epsilon0 * (b - a))
        terms.append(path.xi[j - 1] * (drive.integral(b) - drive.integral(a)))
    return math.fsum(terms)


def work_phase(drive: DriveProtocol, system: SystemSpec, path: BlipPath) -> float:
    """Same phase rebuilt from the nonstationary work rate.

    ``sum_j xi_j eps0 (t_2j - t_2j-1) - sum_j int W_ns,j dt`` with
    ``W_ns,j(t) = -xi_j eps_d(t)`` integrated by quadrature.
    """
    terms = []
    for j in range(1, path.n + 1):
        a, b = path.t(2 * j - 1), path.t(2 * j)
        xi = path.xi[j - 1]
        terms.append(xi * system.epsilon0 * (b - a))
        w_ns_integral = -xi * drive.integrate_bias(a, b)
        terms.append(-w_ns_integral)
    return math.fsum(terms)


def influence_factors(
    table: KernelTable,
    drive: DriveProtocol,
    system: SystemSpec,
    path: BlipPath,
    *,
    zero_lambda: bool = False,
    nearest_sojourn_only: bool = False,
) -> InfluenceFactors:
    return InfluenceFactors(
        q_n=q_amplitude(table, path, zero_lambda=zero_lambda),
        h_n_phase=h_phase(table, path, nearest_sojourn_only=nearest_sojourn_only),
        phi_n=phi_phase(drive, system, path),
    )


# -- batched versions ---------------------------------------------------------


@lru_cache(maxsize=None)
def sign_configurations(n: int) -> tuple[np.ndarray, np.ndarray]:
    """All blip signs ``(2^n, n)`` and restricted sojourn signs ``(2^(n-1), n)``."""
    xi = np.array(list(itertools.product((1, -1), repeat=n)), dtype=float)
    tail = np.array(list(itertools.product((1, -1), repeat=n - 1)), dtype=float).reshape(2 ** (n - 1), n - 1)
    eta = np.concatenate([-np.ones((tail.shape[0], 1)), tail], axis=1)
    xi.setflags(write=False)
    eta.setflags(write=False)
    return xi, eta


@lru_cache(maxsize=None)
def _index_tables(n: int):
    """Flip-time index quadruples for every Lambda_{j,k} and X_{j,k} entry."""
    lam_j, lam_k = np.tril_indices(n, -1)  # 0-based blip indices, k < j
    J, K = lam_j + 1, lam_k + 1
    lam_idx = (2 * J, 2 * K - 1, 2 * J - 1, 2 * K, 2 * J, 2 * K, 2 * J - 1, 2 * K - 1)
    x_j, x_k = np.tril_indices(n, 0)  # blip j (0-based), sojourn k <= j
    J, K = x_j + 1, x_k
    x_idx = (2 * J, 2 * K + 1, 2 * J - 1, 2 * K, 2 * J, 2 * K, 2 * J - 1, 2 * K + 1)
    diag = np.arange(n)
    J, K = diag + 1, diag
    near_idx = (2 * J, 2 * K + 1, 2 * J - 1, 2 * K, 2 * J, 2 * K, 2 * J - 1, 2 * K + 1)
    return (lam_j, lam_k, lam_idx), (x_j, x_k, x_idx), (diag, diag, near_idx)


def with_origin(times: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    return np.concatenate([np.zeros(times.shape[:-1] + (1,)), times], axis=-1)


def _four_term(m: np.ndarray, idx) -> np.ndarray:
    a1, c1, a2, c2, a3, c3, a4, c4 = idx
    return m[:, a1, c1] + m[:, a2, c2] - m[:, a3, c3] - m[:, a4, c4]


def batch_kernels(
    table: KernelTable,
    times: np.ndarray,
    *,
    zero_lambda: bool = False,
    nearest_sojourn_only: bool = False,
):
    """Kernel arrays for a batch of flip-time configurations.

    Returns ``(s_blip, lam, x)`` with shapes ``(B, n)``, ``(B, n, n)``,
    ``(B, n, n)``. ``lam[b, j, k]`` is Lambda_{j+1,k+1} (strictly lower);
    ``x[b, j, k]`` is X_{j+1,k} (lower including the diagonal).
    """
    T = with_origin(times)
    B, m = T.shape
    n = (m - 1) // 2
    s_blip = np.zeros((B, n))
    lam = np.zeros((B, n, n))
    x = np.zeros((B, n, n))
    if table.is_zero:
        return s_blip, lam, x
    # every kernel argument is t_a - t_c with a >= c: tabulate each pair once
    lo_a, lo_c = np.tril_indices(m, -1)
    s_pairs, r_pairs = table.both(T[:, lo_a] - T[:, lo_c])
    s_mat = np.zeros((B, m, m))
    r_mat = np.zeros((B, m, m))
    s_mat[:, lo_a, lo_c] = s_pairs
    r_mat[:, lo_a, lo_c] = r_pairs
    j1 = np.arange(1, n + 1)
    s_blip = s_mat[:, 2 * j1, 2 * j1 - 1]
    lam_part, x_part, near_part = _index_tables(n)
    if not zero_lambda and lam_part[0].size:
        lam[:, lam_part[0], lam_part[1]] = _four_term(s_mat, lam_part[2])
    xj, xk, xidx = near_part if nearest_sojourn_only else x_part
    x[:, xj, xk] = _four_term(r_mat, xidx)
    return s_blip, lam, x


def batch_blip_phases(drive: DriveProtocol, system: SystemSpec, times: np.ndarray, route: str = "phase"):
    """Per-blip phase coefficient ``b_j`` so that ``Phi_n = sum_j xi_j b_j``.

    ``route="phase"`` uses ``g`` differences; ``route="work"`` integrates the
    nonstationary work rate by quadrature over each blip window.
    """
    times = np.asarray(times, dtype=float)
    a, b = times[..., 0::2], times[..., 1::2]
    static = system.epsilon0 * (b - a)
    if route == "phase":
        return static + (drive.integral(b) - drive.integral(a))
    if route == "work":
        # -int W_ns,j dt with W_ns,j = -xi_j eps_d, divided by xi_j
        return static + drive.integrate_bias(a, b)
    raise DomainError(f"unknown assembly route {route!r}")
