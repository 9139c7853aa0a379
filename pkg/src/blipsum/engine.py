"""Transition probability p_{L->R}(t) as a sum over blip orders.

Order ``n`` contributes

    -(-Delta^2/4)^n  int_{t_1<...<t_2n<t}  sum_xi sum_eta'  Q_n e^{i Phi_n} H_n

where the discrete sums are carried out exactly and the ordered time
integral is done either with a tensor Gauss-Legendre rule on a nested
simplex map or by Monte Carlo.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from . import kernels
from .bath import BathSpec, KernelTable, build_kernel_table
from .drive import DriveProtocol, SystemSpec
from .errors import ConvergenceError, DomainError, ResourceError
from .kernels import BlipPath

QUADRATURES = ("deterministic", "monte-carlo")
ETA_SUMS = ("factorized", "enumerate")
ASSEMBLIES = ("phase", "work", "both")

# complex values held per chunk in the (xi, eta) enumeration
_CHUNK_BUDGET = 1 << 21
# the (xi, eta) sum is real; a larger imaginary part relative to the node's
# L1 magnitude means the configuration sum is broken
IMAG_TOLERANCE = 1e-10


@dataclass(frozen=True)
class EngineConfig:
    """Numerical settings for the series evaluation.

    ``quadrature="deterministic"`` uses Gauss-Legendre for orders up to
    ``det_max_order`` and Monte Carlo above; ``"monte-carlo"`` samples
    every order. ``eta_sum="factorized"`` sums each sojourn sign in closed
    form (exact, and cheap), ``"enumerate"`` loops over all ``2^(n-1)``
    sojourn configurations.
    """

    n_max: int = 6
    quadrature: str = "deterministic"
    mc_samples: int = 100_000
    seed: int = 0
    det_points_per_dim: int = 16
    det_max_order: int = 2
    target_time_grid: tuple = (0.0, 0.5, 1.0, 1.5, 2.0)
    niba: bool = False
    zero_lambda: bool = False
    nearest_sojourn_only: bool = False
    eta_sum: str = "factorized"
    assembly: str = "phase"
    series_tol: float = 0.0
    workers: int = 1
    chunk_size: int = 8192
    max_configurations: int = 1 << 16
    max_det_nodes: int = 1 << 22

    def __post_init__(self):
        object.__setattr__(self, "target_time_grid", tuple(float(t) for t in self.target_time_grid))
        if not 1 <= self.n_max <= 8:
            raise DomainError(f"n_max must lie in 1..8, got {self.n_max}")
        if self.quadrature not in QUADRATURES:
            raise DomainError(f"quadrature must be one of {QUADRATURES}, got {self.quadrature!r}")
        if self.eta_sum not in ETA_SUMS:
            raise DomainError(f"eta_sum must be one of {ETA_SUMS}, got {self.eta_sum!r}")
        if self.assembly not in ASSEMBLIES:
            raise DomainError(f"assembly must be one of {ASSEMBLIES}, got {self.assembly!r}")
        if self.mc_samples < 1:
            raise DomainError("mc_samples must be >= 1")
        if self.det_points_per_dim < 1 or self.det_max_order < 0:
            raise DomainError("det_points_per_dim must be >= 1 and det_max_order >= 0")
        if self.workers < 1 or self.chunk_size < 1:
            raise DomainError("workers and chunk_size must be >= 1")
        if self.series_tol < 0:
            raise DomainError("series_tol must be >= 0")
        grid = np.asarray(self.target_time_grid)
        if grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
            raise DomainError("target_time_grid must be non-empty, non-negative and strictly increasing")
        if self.niba and not (self.zero_lambda and self.nearest_sojourn_only):
            raise DomainError("niba=true requires zero_lambda=true and nearest_sojourn_only=true")

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.target_time_grid)

    def is_deterministic(self, n: int) -> bool:
        return self.quadrature == "deterministic" and n <= self.det_max_order


@dataclass
class SeriesResult:
    """Per-time transition probabilities with their per-order breakdown.

    ``per_order[n-1, i]`` is the order-``n`` contribution at ``times[i]``;
    orders dropped by the truncation policy hold exactly zero. ``p_values``
    is the compensated sum of each column.
    """

    times: np.ndarray
    p_values: np.ndarray
    per_order: np.ndarray
    mc_stderr: np.ndarray
    per_order_stderr: np.ndarray
    truncation_estimate: np.ndarray
    imag_residual: np.ndarray
    orders_used: np.ndarray
    nonconverged: np.ndarray
    out_of_range: np.ndarray
    max_node_imag: float = 0.0
    assembly_discrepancy: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return not (self.nonconverged.any() or self.out_of_range.any())


@dataclass(frozen=True)
class OrderEstimate:
    value: float
    stderr: float
    imag: float
    max_node_imag: float
    assembly_discrepancy: float


# -- quadrature nodes ---------------------------------------------------------


@lru_cache(maxsize=32)
def _unit_tensor_rule(dim: int, points: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(points)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    u = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    u.setflags(write=False)
    weights.setflags(write=False)
    return u, weights


def deterministic_nodes(n: int, t: float, points: int) -> tuple[np.ndarray, np.ndarray]:
    """Ordered flip times and weights from a nested map of the unit cube.

    ``t_2n = t u_2n`` and ``t_k = t_{k+1} u_k``; the Jacobian
    ``prod_k t_{k+1}`` is polynomial in ``u`` so Gauss-Legendre stays
    spectrally accurate.
    """
    u, w = _unit_tensor_rule(2 * n, points)
    times = np.empty_like(u)
    upper = np.full(u.shape[0], float(t))
    jac = np.ones(u.shape[0])
    for k in range(2 * n - 1, -1, -1):
        jac = jac * upper
        upper = upper * u[:, k]
        times[:, k] = upper
    return times, w * jac


def substream(seed: int, n: int, time_index: int) -> np.random.Generator:
    """Independent generator for one (order, time) work item."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=(n, time_index))
    return np.random.Generator(np.random.Philox(ss))


def monte_carlo_nodes(
    n: int, t: float, samples: int, rng: np.random.Generator, chunk: int
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Uniform samples on the ordered simplex (sorted uniforms), in chunks.

    Each node carries the simplex volume ``t^2n / (2n)!`` as its weight.
    """
    volume = float(t) ** (2 * n) / math.factorial(2 * n)
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        times = np.sort(rng.random((m, 2 * n)), axis=1) * t
        yield times, np.full(m, volume)
        done += m


# -- integrands ---------------------------------------------------------------


@dataclass
class NodeValues:
    """Real part, imaginary part and L1 magnitude of the (xi, eta) sum per node."""

    re: np.ndarray
    im: np.ndarray
    scale: np.ndarray


def _full_integrand(s_blip, lam, x, bases, n, eta_sum) -> NodeValues:
    xi, eta = kernels.sign_configurations(n)
    log_q = np.broadcast_to(-s_blip.sum(axis=1)[:, None], (s_blip.shape[0], xi.shape[0]))
    if lam.any():
        log_q = log_q - np.sum(np.matmul(lam, xi.T) * xi.T, axis=1)
    q = np.exp(log_q)
    phi = bases @ xi.T
    if not x.any():
        # no sojourn coupling: every eta configuration contributes alike
        amp = q * eta.shape[0]
        re = np.sum(amp * np.cos(phi), axis=1)
        im = np.sum(amp * np.sin(phi), axis=1)
        return NodeValues(re, im, amp.sum(axis=1))
    # y[b, c, k] = sum_j xi_j X_{j,k}: the coefficient of eta_k in the H phase
    y = np.matmul(xi, x)
    if eta_sum == "enumerate":
        theta = phi[:, :, None] + y @ eta.T
        amp = q[:, :, None]
        re = np.sum(amp * np.cos(theta), axis=(1, 2))
        im = np.sum(amp * np.sin(theta), axis=(1, 2))
    else:
        theta = phi - y[:, :, 0]
        amp = q * np.prod(2.0 * np.cos(y[:, :, 1:]), axis=2)
        re = np.sum(amp * np.cos(theta), axis=1)
        im = np.sum(amp * np.sin(theta), axis=1)
    scale = q.sum(axis=1) * eta.shape[0]
    return NodeValues(re, im, scale)


def _niba_integrand(s_blip, x, bases) -> NodeValues:
    damp = np.exp(-s_blip)
    first = 2.0 * damp[:, 0] * np.cos(bases[:, 0] - x[:, 0, 0])
    diag = np.diagonal(x, axis1=1, axis2=2)
    rest = 4.0 * damp[:, 1:] * np.cos(bases[:, 1:]) * np.cos(diag[:, 1:])
    re = first * np.prod(rest, axis=1)
    n = s_blip.shape[1]
    scale = damp.prod(axis=1) * 2.0 ** (2 * n - 1)
    return NodeValues(re, np.zeros_like(re), scale)


def integrand_on_nodes(
    system: SystemSpec,
    table: KernelTable,
    drive: DriveProtocol,
    times: np.ndarray,
    cfg: EngineConfig,
    *,
    niba: bool = False,
    route: str | None = None,
) -> NodeValues:
    """Evaluate the exact (xi, eta) sum at each row of ``times`` (shape ``(B, 2n)``).

    With ``niba=True`` the per-blip factorized product is used instead of
    the configuration sum; this requires the NIBA flags in ``cfg``.
    """
    times = np.atleast_2d(np.asarray(times, dtype=float))
    n = times.shape[1] // 2
    if times.shape[1] != 2 * n or n < 1:
        raise DomainError("node array must have an even, positive number of columns")
    if niba and not cfg.niba:
        raise DomainError("the factorized NIBA integrand requires cfg.niba = true")
    if route is None:
        route = "work" if cfg.assembly == "work" else "phase"
    s_blip, lam, x = kernels.batch_kernels(
        table, times, zero_lambda=cfg.zero_lambda, nearest_sojourn_only=cfg.nearest_sojourn_only
    )
    bases = kernels.batch_blip_phases(drive, system, times, route)
    if niba:
        return _niba_integrand(s_blip, x, bases)
    return _full_integrand(s_blip, lam, x, bases, n, cfg.eta_sum)


# -- order terms --------------------------------------------------------------


def _prefactor(system: SystemSpec, n: int) -> float:
    return -((-(system.delta**2) / 4.0) ** n)


def _check_budget(n: int, cfg: EngineConfig) -> None:
    configs = 2 ** (2 * n - 1)
    if configs > cfg.max_configurations:
        raise ResourceError(
            f"order {n} needs {configs} (xi, eta) configurations per node, budget is {cfg.max_configurations}"
        )
    if cfg.is_deterministic(n) and cfg.det_points_per_dim ** (2 * n) > cfg.max_det_nodes:
        raise ResourceError(
            f"deterministic order {n} needs {cfg.det_points_per_dim ** (2 * n)} nodes, budget is {cfg.max_det_nodes}"
        )


def _order_estimate(
    system: SystemSpec,
    table: KernelTable,
    drive: DriveProtocol,
    n: int,
    t: float,
    time_index: int,
    cfg: EngineConfig,
    niba: bool,
) -> OrderEstimate:
    if t == 0.0 or system.delta == 0.0:
        return OrderEstimate(0.0, 0.0, 0.0, 0.0, 0.0)
    if t > table.tau_max * (1.0 + 1e-12):
        raise DomainError(f"time {t} exceeds the kernel table range {table.tau_max}")
    pref = _prefactor(system, n)
    if niba:
        configs = n
    elif cfg.eta_sum == "enumerate":
        configs = 2 ** (2 * n - 1)
    else:
        configs = 2**n * n
    chunk = max(1, min(cfg.chunk_size, _CHUNK_BUDGET // configs))

    if cfg.is_deterministic(n):
        all_times, all_weights = deterministic_nodes(n, t, cfg.det_points_per_dim)
        batches = (
            (all_times[i : i + chunk], all_weights[i : i + chunk]) for i in range(0, len(all_weights), chunk)
        )
    else:
        batches = monte_carlo_nodes(n, t, cfg.mc_samples, substream(cfg.seed, n, time_index), chunk)

    re_parts, im_parts = [], []
    max_imag = 0.0
    discrepancy = 0.0
    for times, weights in batches:
        vals = integrand_on_nodes(system, table, drive, times, cfg, niba=niba)
        re_parts.append(weights * vals.re)
        im_parts.append(weights * vals.im)
        rel = np.abs(vals.im) / np.maximum(vals.scale, np.finfo(float).tiny)
        max_imag = max(max_imag, float(rel.max(initial=0.0)))
        if cfg.assembly == "both":
            b_phase = kernels.batch_blip_phases(drive, system, times, "phase")
            b_work = kernels.batch_blip_phases(drive, system, times, "work")
            dev = np.abs(b_phase - b_work) / np.maximum(1.0, np.abs(b_phase))
            discrepancy = max(discrepancy, float(dev.max(initial=0.0)))
    if max_imag > IMAG_TOLERANCE:
        raise ConvergenceError(
            f"order {n} at t={t}: imaginary residual {max_imag:.3e} of the node magnitude exceeds {IMAG_TOLERANCE}"
        )
    re_all = np.concatenate(re_parts)
    im_all = np.concatenate(im_parts)

    if cfg.is_deterministic(n):
        value = pref * math.fsum(re_all)
        imag = pref * math.fsum(im_all)
        stderr = 0.0
    else:
        m = re_all.size
        value = pref * math.fsum(re_all) / m
        imag = pref * math.fsum(im_all) / m
        stderr = abs(pref) * float(np.std(re_all, ddof=1)) / math.sqrt(m) if m > 1 else math.inf
    return OrderEstimate(value, stderr, imag, max_imag, discrepancy)


def _as_table(bath, cfg: EngineConfig) -> KernelTable:
    if isinstance(bath, KernelTable):
        return bath
    if isinstance(bath, BathSpec):
        return build_kernel_table(bath, max(cfg.times.max(), 1e-6), 1e-9)
    raise DomainError(f"expected a KernelTable or BathSpec, got {type(bath).__name__}")


def order_n_term(
    system: SystemSpec,
    bath,
    drive: DriveProtocol,
    n: int,
    t: float,
    cfg: EngineConfig,
    *,
    time_index: int = 0,
) -> float:
    """Order-``n`` contribution to p_{L->R}(t).

    Monte Carlo orders draw from the substream ``(cfg.seed, n, time_index)``.
    """
    if not 1 <= n <= cfg.n_max:
        raise DomainError(f"order must lie in 1..{cfg.n_max}, got {n}")
    if t < 0:
        raise DomainError("time must be >= 0")
    _check_budget(n, cfg)
    table = _as_table(bath, cfg)
    return _order_estimate(system, table, drive, n, float(t), time_index, cfg, niba=False).value


def _run_series(system, bath, drive, cfg: EngineConfig, niba: bool) -> SeriesResult:
    table = _as_table(bath, cfg)
    times = cfg.times
    if times.max() > table.tau_max * (1.0 + 1e-12):
        raise DomainError(f"output grid reaches {times.max()} beyond the kernel table range {table.tau_max}")
    for n in range(1, cfg.n_max + 1):
        if not niba:
            _check_budget(n, cfg)
    items = [(n, i) for n in range(1, cfg.n_max + 1) for i in range(times.size)]

    def work(item):
        n, i = item
        return _order_estimate(system, table, drive, n, float(times[i]), i, cfg, niba)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            estimates = list(pool.map(work, items))
    else:
        estimates = [work(item) for item in items]

    n_max, n_t = cfg.n_max, times.size
    raw = np.zeros((n_max, n_t))
    raw_err = np.zeros((n_max, n_t))
    raw_imag = np.zeros((n_max, n_t))
    max_imag = 0.0
    discrepancy = 0.0
    for (n, i), est in zip(items, estimates):
        raw[n - 1, i] = est.value
        raw_err[n - 1, i] = est.stderr
        raw_imag[n - 1, i] = est.imag
        max_imag = max(max_imag, est.max_node_imag)
        discrepancy = max(discrepancy, est.assembly_discrepancy)
    return _assemble(times, raw, raw_err, raw_imag, cfg, max_imag, discrepancy, niba)


def _assemble(times, raw, raw_err, raw_imag, cfg, max_imag, discrepancy, niba) -> SeriesResult:
    n_max, n_t = raw.shape
    per_order = np.zeros_like(raw)
    per_err = np.zeros_like(raw)
    p = np.zeros(n_t)
    stderr = np.zeros(n_t)
    trunc = np.zeros(n_t)
    imag = np.zeros(n_t)
    used = np.zeros(n_t, dtype=int)
    nonconv = np.zeros(n_t, dtype=bool)
    for i in range(n_t):
        kept = []
        for n in range(n_max):
            kept.append(raw[n, i])
            if cfg.series_tol > 0 and abs(raw[n, i]) < cfg.series_tol * abs(math.fsum(kept)):
                break
        m = len(kept)
        per_order[:m, i] = kept
        per_err[:m, i] = raw_err[:m, i]
        p[i] = math.fsum(per_order[:, i])
        stderr[i] = math.sqrt(math.fsum(per_err[:, i] ** 2))
        trunc[i] = abs(kept[-1])
        imag[i] = math.fsum(np.abs(raw_imag[:m, i]))
        used[i] = m
        nonconv[i] = m >= 2 and abs(kept[-1]) > abs(kept[-2])
    delta = trunc + 3.0 * stderr
    out_of_range = (p < -delta) | (p > 1.0 + delta)
    return SeriesResult(
        times=np.asarray(times, dtype=float),
        p_values=p,
        per_order=per_order,
        mc_stderr=stderr,
        per_order_stderr=per_err,
        truncation_estimate=trunc,
        imag_residual=imag,
        orders_used=used,
        nonconverged=nonconv,
        out_of_range=out_of_range,
        max_node_imag=max_imag,
        assembly_discrepancy=discrepancy,
        meta={"engine": "niba" if niba else "full", "n_max": n_max},
    )


def transition_probability(system: SystemSpec, bath, drive: DriveProtocol, cfg: EngineConfig) -> SeriesResult:
    """p_{L->R} on ``cfg.target_time_grid`` by exact configuration sums.

    ``bath`` is a :class:`KernelTable` or a :class:`BathSpec` (tabulated on
    the fly). With ``cfg.niba`` the blip-blip and non-nearest sojourn
    couplings are dropped but the configuration sum is still enumerated.
    """
    return _run_series(system, bath, drive, cfg, niba=False)


def transition_probability_niba(
    system: SystemSpec, bath, drive: DriveProtocol, cfg: EngineConfig
) -> SeriesResult:
    """Same series with the per-blip factorized integrand, O(n) per node."""
    if not cfg.niba:
        raise DomainError("transition_probability_niba requires cfg.niba = true")
    return _run_series(system, bath, drive, cfg, niba=True)


# -- work-functional form -----------------------------------------------------


def enumerate_paths(times: Sequence[float]) -> list[BlipPath]:
    """Every (xi, eta) configuration for one set of flip times."""
    n = len(times) // 2
    xi_cfg, eta_cfg = kernels.sign_configurations(n)
    return [BlipPath(tuple(times), tuple(xi.astype(int)), tuple(eta.astype(int))) for xi in xi_cfg for eta in eta_cfg]


def work_form_average(
    system: SystemSpec,
    bath: KernelTable,
    drive: DriveProtocol,
    path_batch: Sequence[BlipPath],
    t: float,
) -> tuple[float, float]:
    """Generalized average of ``exp(-i sum_j int W_ns,j)`` over a path batch.

    Each path contributes ``Q_n H_n exp(i sum_j xi_j eps0 tau_j)`` times the
    work exponential, with the work integrated from the work rate. Returns
    the real accumulator and the imaginary residual.
    """
    if not path_batch:
        return 0.0, 0.0
    n = path_batch[0].n
    re_terms, im_terms = [], []
    for path in path_batch:
        if path.n != n:
            raise DomainError("all paths in a batch must share the blip order")
        if path.times[-1] > t:
            raise DomainError("path flip times exceed t")
        q = kernels.q_amplitude(bath, path)
        theta = kernels.work_phase(drive, system, path) + kernels.h_phase(bath, path)
        re_terms.append(q * math.cos(theta))
        im_terms.append(q * math.sin(theta))
    return math.fsum(re_terms), math.fsum(im_terms)
