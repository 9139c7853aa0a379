"""Independent reference computations.

Nothing here touches the path-sum machinery: the two-level system is
integrated directly, the few-mode bath is propagated in a truncated Fock
space, correlators come from a self-contained adaptive Gauss-Kronrod rule,
and the work statistics follow from two projective energy measurements.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg, sparse

from .bath import BathSpec, KernelTable, spectral_density
from .drive import DriveProtocol, SystemSpec
from .errors import ConvergenceError, DomainError, ResourceError

SX = np.array([[0.0, 1.0], [1.0, 0.0]])
# basis order (|L>, |R>); sigma_z = |R><R| - |L><L|
SZ = np.array([[-1.0, 0.0], [0.0, 1.0]])


def tls_hamiltonian(system: SystemSpec, bias: float) -> np.ndarray:
    return -0.5 * system.delta * SX - 0.5 * (system.epsilon0 + bias) * SZ


def _segments(drive: DriveProtocol, t_end: float) -> np.ndarray:
    bp = drive.breakpoints()
    inner = bp[(bp > 0) & (bp < t_end)]
    return np.unique(np.concatenate([[0.0], inner, [t_end]]))


def _propagate(make_rhs, y0, t_grid, drive, rtol, atol):
    """Integrate segment by segment between drive breakpoints, sampling on ``t_grid``.

    ``make_rhs(bias)`` builds the right-hand side for a bias function; inside
    each segment the bias is read strictly in the open interval so that a
    jump at a segment edge never leaks into the neighbouring segment.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    out = np.empty((t_grid.size, np.size(y0)), dtype=complex)
    y = np.asarray(y0, dtype=complex)
    out[t_grid == 0.0] = y
    if t_grid.max() == 0.0:
        return out
    edges = _segments(drive, float(t_grid.max()))
    for a, b in zip(edges[:-1], edges[1:]):
        lo, hi = np.nextafter(a, b), np.nextafter(b, a)

        def bias(t, lo=lo, hi=hi):
            return float(drive.bias(min(max(t, lo), hi)))

        sel = (t_grid > a) & (t_grid < b)
        t_eval = np.concatenate([t_grid[sel], [b]])
        sol = integrate.solve_ivp(make_rhs(bias), (a, b), y, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
        if not sol.success:
            raise ConvergenceError(f"ODE integration failed on [{a}, {b}]: {sol.message}")
        out[sel] = sol.y[:, :-1].T
        y = sol.y[:, -1]
        out[t_grid == b] = y
    return out


def tls_ode_probability(
    system: SystemSpec, drive: DriveProtocol, t_grid, *, rtol: float = 1e-11, atol: float = 1e-13
) -> np.ndarray:
    """|<R|psi(t)>|^2 for the closed driven two-level system started in |L>."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0):
        raise DomainError("time grid must be non-negative")

    def make_rhs(bias):
        def rhs(t, psi):
            return -1j * (tls_hamiltonian(system, bias(t)) @ psi)

        return rhs

    psi = _propagate(make_rhs, np.array([1.0, 0.0]), t_grid, drive, rtol, atol)
    return np.abs(psi[:, 1]) ** 2


def tls_propagator(system: SystemSpec, drive: DriveProtocol, tau: float, *, rtol=1e-12, atol=1e-14) -> np.ndarray:
    """Time-ordered 2x2 evolution operator over ``[0, tau]``."""
    if tau == 0:
        return np.eye(2, dtype=complex)

    def make_rhs(bias):
        def rhs(t, u):
            return (-1j * tls_hamiltonian(system, bias(t)) @ u.reshape(2, 2)).ravel()

        return rhs

    u = _propagate(make_rhs, np.eye(2, dtype=complex).ravel(), np.array([tau]), drive, rtol, atol)
    return u[-1].reshape(2, 2)


# -- few-mode bath ------------------------------------------------------------


@dataclass(frozen=True)
class FewModeBath:
    """A handful of bath modes coupled as ``(sigma_z / 2) sum_k c_k (b_k + b_k^+)``.

    In this normalization the influence kernels are
    ``S = sum_k (c_k/w_k)^2 (1 - cos w_k t) coth(w_k / 2T)`` and
    ``R = sum_k (c_k/w_k)^2 sin w_k t``.
    """

    frequencies: tuple
    couplings: tuple
    fock_cutoff: int = 6
    temperature: float = 0.0

    def __post_init__(self):
        w = tuple(float(v) for v in self.frequencies)
        c = tuple(float(v) for v in self.couplings)
        if not 1 <= len(w) <= 4 or len(c) != len(w):
            raise DomainError("few-mode bath needs 1 to 4 modes with one coupling each")
        if any(v <= 0 for v in w):
            raise DomainError("mode frequencies must be positive")
        if not 2 <= self.fock_cutoff <= 8:
            raise DomainError("fock_cutoff must lie in 2..8")
        if self.temperature < 0:
            raise DomainError("temperature must be >= 0")
        object.__setattr__(self, "frequencies", w)
        object.__setattr__(self, "couplings", c)

    @property
    def mode_count(self) -> int:
        return len(self.frequencies)

    @classmethod
    def discretize(cls, spec: BathSpec, mode_count: int, fock_cutoff: int = 6) -> "FewModeBath":
        """Equal-width bins on ``[0, 4 w_c]`` with the bin weight of J put on its midpoint."""
        edges = np.linspace(0.0, 4.0 * spec.omega_c, mode_count + 1)
        freqs, coups = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            weight, _ = integrate.quad(lambda w: float(spectral_density(spec, w)), a, b)
            freqs.append(0.5 * (a + b))
            coups.append(math.sqrt(weight / math.pi))
        return cls(tuple(freqs), tuple(coups), fock_cutoff, spec.temperature)

    def correlators(self, tau):
        tau = np.asarray(tau, dtype=float)
        s_out = np.zeros_like(tau)
        r_out = np.zeros_like(tau)
        for w, c in zip(self.frequencies, self.couplings):
            amp = (c / w) ** 2
            coth = 1.0 if self.temperature == 0 else 1.0 / math.tanh(w / (2.0 * self.temperature))
            s_out = s_out + amp * 2.0 * np.sin(0.5 * w * tau) ** 2 * coth
            r_out = r_out + amp * np.sin(w * tau)
        return s_out, r_out

    def kernel_table(self, tau_max: float, tolerance: float = 1e-9) -> KernelTable:
        return KernelTable.from_functions(
            lambda t: self.correlators(t)[0],
            lambda t: self.correlators(t)[1],
            tau_max,
            tolerance,
            scale=0.1 / max(self.frequencies),
        )


def _fock_operators(bath: FewModeBath, cutoff: int):
    dims = [cutoff] * bath.mode_count
    a = sparse.diags(np.sqrt(np.arange(1, cutoff)), 1, format="csr")
    ops = []
    for k in range(bath.mode_count):
        parts = [sparse.identity(d, format="csr") for d in dims]
        parts[k] = a
        op = parts[0]
        for p in parts[1:]:
            op = sparse.kron(op, p, format="csr")
        ops.append(op)
    return ops, int(np.prod(dims))


def _thermal_configurations(bath: FewModeBath, cutoff: int, samples: int, seed: int):
    """Fock occupation tuples with Gibbs weights inside the truncated space."""
    w = np.asarray(bath.frequencies)
    if bath.temperature == 0:
        return [((0,) * bath.mode_count, 1.0)]
    levels = np.arange(cutoff)
    mode_probs = [np.exp(-wk * levels / bath.temperature) for wk in w]
    mode_probs = [p / p.sum() for p in mode_probs]
    if bath.mode_count <= 2:
        out = []
        for occ in itertools.product(range(cutoff), repeat=bath.mode_count):
            weight = float(np.prod([mode_probs[k][n] for k, n in enumerate(occ)]))
            if weight > 1e-14:
                out.append((occ, weight))
        total = math.fsum(wt for _, wt in out)
        return [(occ, wt / total) for occ, wt in out]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    draws = np.stack([rng.choice(cutoff, size=samples, p=p) for p in mode_probs], axis=1)
    return [(tuple(int(v) for v in row), 1.0 / samples) for row in draws]


def _few_mode_run(system, bath, drive, t_grid, cutoff, samples, seed, rtol):
    ops, dim_b = _fock_operators(bath, cutoff)
    dim = 2 * dim_b
    if dim > 2 * 8**4:
        raise ResourceError(f"truncated space of dimension {dim} exceeds the 2*8^4 budget")
    eye_b = sparse.identity(dim_b, format="csr")
    h_bath = sum(w * (a.T @ a) for w, a in zip(bath.frequencies, ops))
    coupling = sum(c * (a + a.T) for c, a in zip(bath.couplings, ops))
    h_static = (
        sparse.kron(tls_hamiltonian(system, 0.0), eye_b)
        + sparse.kron(sparse.identity(2), h_bath)
        + sparse.kron(0.5 * SZ, coupling)
    ).tocsr()
    drive_op = sparse.kron(-0.5 * SZ, eye_b).tocsr()

    def make_rhs(bias):
        def rhs(t, psi):
            return -1j * (h_static @ psi + bias(t) * (drive_op @ psi))

        return rhs

    strides = [cutoff ** (bath.mode_count - 1 - k) for k in range(bath.mode_count)]
    p = np.zeros(np.asarray(t_grid).size)
    for occ, weight in _thermal_configurations(bath, cutoff, samples, seed):
        psi0 = np.zeros(dim, dtype=complex)
        psi0[sum(n * s for n, s in zip(occ, strides))] = 1.0  # |L> (x) |occ>
        psi = _propagate(make_rhs, psi0, t_grid, drive, rtol, rtol * 1e-2)
        p += weight * np.sum(np.abs(psi[:, dim_b:]) ** 2, axis=1)
    return p


def few_mode_exact_probability(
    system: SystemSpec,
    bath: FewModeBath,
    drive: DriveProtocol,
    t_grid,
    *,
    tolerance: float = 1e-4,
    thermal_samples: int = 64,
    seed: int = 0,
    rtol: float = 1e-10,
) -> np.ndarray:
    """p_{L->R}(t) from exact propagation of the system plus few bath modes.

    The run is repeated with half the Fock cutoff; a difference above
    ``tolerance`` raises :class:`ConvergenceError`.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    p = _few_mode_run(system, bath, drive, t_grid, bath.fock_cutoff, thermal_samples, seed, rtol)
    coarse = max(2, bath.fock_cutoff // 2)
    if coarse < bath.fock_cutoff:
        p_coarse = _few_mode_run(system, bath, drive, t_grid, coarse, thermal_samples, seed, rtol)
        dev = float(np.max(np.abs(p - p_coarse)))
        if dev > tolerance:
            raise ConvergenceError(
                f"Fock truncation not converged: cutoff {coarse} -> {bath.fock_cutoff} changes p by {dev:.3e}"
            )
    return p


# -- two-point-measurement work statistics ------------------------------------


def _eigenprojectors(h: np.ndarray, tol: float = 1e-12):
    vals, vecs = np.linalg.eigh(h)
    groups = []
    for i, v in enumerate(vals):
        if groups and abs(v - groups[-1][0]) <= tol * max(1.0, abs(v)):
            groups[-1][1].append(i)
        else:
            groups.append([v, [i]])
    return [(float(np.mean(vals[idx])), vecs[:, idx] @ vecs[:, idx].conj().T) for _, idx in groups]


@dataclass(frozen=True)
class TPMSetup:
    h_initial: np.ndarray
    h_final: np.ndarray
    propagator: np.ndarray
    rho_dephased: np.ndarray


def tpm_setup(system: SystemSpec, drive: DriveProtocol, tau: float, rho=None) -> TPMSetup:
    if tau < 0:
        raise DomainError("protocol duration must be >= 0")
    rho = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex) if rho is None else np.asarray(rho, dtype=complex)
    h0 = tls_hamiltonian(system, float(drive.bias(0.0)))
    h1 = tls_hamiltonian(system, float(drive.bias(tau)))
    # the first energy measurement dephases the state in the H(lambda_0) basis
    rho_bar = sum(p @ rho @ p for _, p in _eigenprojectors(h0))
    # the integrator leaves ~1e-13 norm drift; the nearest unitary removes it
    w, _, vh = np.linalg.svd(tls_propagator(system, drive, tau))
    return TPMSetup(h0, h1, w @ vh, rho_bar)


def tpm_characteristic_function(system: SystemSpec, drive: DriveProtocol, nu, tau: float, *, rho=None):
    """chi(nu) = Tr[U e^{-i nu H(lambda_0)} rho U^+ e^{i nu H(lambda_tau)}] with rho dephased."""
    setup = tpm_setup(system, drive, tau, rho)
    nus = np.atleast_1d(np.asarray(nu, dtype=float))
    u = setup.propagator
    out = np.empty(nus.size, dtype=complex)
    for i, v in enumerate(nus):
        left = u @ linalg.expm(-1j * v * setup.h_initial) @ setup.rho_dephased @ u.conj().T
        out[i] = np.trace(left @ linalg.expm(1j * v * setup.h_final))
    if np.ndim(nu) == 0:
        return complex(out[0])
    return out


def tpm_work_distribution(system: SystemSpec, drive: DriveProtocol, tau: float, *, rho=None, merge_tol=1e-12):
    """Work values ``E_n(tau) - E_m(0)`` with their joint TPM probabilities."""
    setup = tpm_setup(system, drive, tau, rho)
    u = setup.propagator
    values, probs = [], []
    for e0, p0 in _eigenprojectors(setup.h_initial):
        for e1, p1 in _eigenprojectors(setup.h_final):
            prob = np.trace(p1 @ u @ p0 @ setup.rho_dephased @ p0 @ u.conj().T).real
            values.append(e1 - e0)
            probs.append(prob)
    order = np.argsort(values)
    values, probs = np.asarray(values)[order], np.asarray(probs)[order]
    merged_v, merged_p = [], []
    for v, p in zip(values, probs):
        if merged_v and abs(v - merged_v[-1]) <= merge_tol * max(1.0, abs(v)):
            merged_p[-1] += p
        else:
            merged_v.append(float(v))
            merged_p.append(float(p))
    return np.asarray(merged_v), np.asarray(merged_p)


def reconstruct_work_distribution(chi_values, nus, support) -> np.ndarray:
    """Least-squares weights ``p_k`` with ``chi(nu) = sum_k p_k e^{i nu W_k}``."""
    a = np.exp(1j * np.outer(np.asarray(nus, dtype=float), np.asarray(support, dtype=float)))
    sol, *_ = np.linalg.lstsq(a, np.asarray(chi_values, dtype=complex), rcond=None)
    return sol.real


def tpm_mean_work(system: SystemSpec, drive: DriveProtocol, tau: float, *, rho=None) -> float:
    """Direct average ``Tr[H(lambda_tau) U rho_bar U^+] - Tr[H(lambda_0) rho_bar]``."""
    s = tpm_setup(system, drive, tau, rho)
    evolved = s.propagator @ s.rho_dephased @ s.propagator.conj().T
    return float(np.trace(s.h_final @ evolved).real - np.trace(s.h_initial @ s.rho_dephased).real)


# -- brute-force correlator quadrature ----------------------------------------

# 15-point Kronrod rule and its embedded 7-point Gauss rule on [-1, 1]
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
KRONROD_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS_WEIGHTS = np.zeros(15)
GAUSS_WEIGHTS[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


def adaptive_gauss_kronrod(f, a: float, b: float, *, rel_tol=1e-10, abs_tol=1e-300, initial=16, max_intervals=200_000):
    """Globally adaptive G7/K15 quadrature with interval bisection.

    ``f`` must accept arrays. Intervals whose error share exceeds the
    tolerance budget are halved until the summed error estimate meets
    ``max(abs_tol, rel_tol * |I|)``.
    """
    edges = np.linspace(a, b, initial + 1)
    lo, hi = edges[:-1], edges[1:]
    accepted_val, accepted_err = [], []
    total_len = b - a
    while True:
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        vals = f(mid[:, None] + half[:, None] * KRONROD_NODES)
        k15 = half * (vals @ KRONROD_WEIGHTS)
        g7 = half * (vals @ GAUSS_WEIGHTS)
        err = np.abs(k15 - g7)
        estimate = math.fsum(accepted_val) + math.fsum(k15)
        budget = max(abs_tol, rel_tol * abs(estimate))
        share = budget * (hi - lo) / total_len
        done = err <= share
        accepted_val.extend(k15[done])
        accepted_err.extend(err[done])
        if done.all():
            break
        lo, hi = lo[~done], hi[~done]
        mid = 0.5 * (lo + hi)
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
        if len(accepted_val) + lo.size > max_intervals:
            raise ConvergenceError("adaptive quadrature exceeded its interval budget")
    return math.fsum(accepted_val), math.fsum(accepted_err)


def quadrature_correlators(spec: BathSpec, tau: float, *, rel_tol: float = 1e-10) -> tuple[float, float]:
    """Brute-force S(tau), R(tau) straight from their frequency integrals."""
    tau = float(tau)
    if spec.alpha == 0.0 or tau == 0.0:
        return 0.0, 0.0
    sign = math.copysign(1.0, tau)
    tau = abs(tau)
    w_max = 80.0 * spec.omega_c
    pieces = max(16, int(math.ceil(w_max * tau / math.pi)))

    def base(w):
        return 2.0 * spec.alpha * np.where(w > 0, w, 1.0) ** (spec.s - 2.0) * np.exp(-w / spec.omega_c)

    def s_integrand(w):
        out = base(w) * 2.0 * np.sin(0.5 * w * tau) ** 2
        if spec.temperature > 0:
            x = w / (2.0 * spec.temperature)
            out = out / np.tanh(np.where(x > 0, x, 1.0))
        return np.where(w > 0, out, 0.0)

    def r_integrand(w):
        return np.where(w > 0, base(w) * np.sin(w * tau), 0.0)

    # near w = 0 both integrands behave like w^(s-1); w = w1 u^m with m s >= 2
    # turns that into a smooth power of u
    w1 = min(spec.omega_c, math.pi / tau, w_max)
    m = max(1.0, 2.0 / spec.s)

    def near(f):
        return lambda u: f(w1 * u**m) * w1 * m * u ** (m - 1.0)

    values = []
    for f in (s_integrand, r_integrand):
        head, _ = adaptive_gauss_kronrod(near(f), 0.0, 1.0, rel_tol=rel_tol, initial=16)
        tail, _ = adaptive_gauss_kronrod(f, w1, w_max, rel_tol=rel_tol, initial=pieces)
        values.append(head + tail)
    s_val, r_val = values
    return s_val, sign * r_val
