"""Secret key rates for Gaussian-modulated CV-QKD under collective attacks.

Reverse reconciliation, entangling-cloner model with a trusted detector.  The
detector's inefficiency and electronic noise are treated as trusted and
purified by a beam splitter fed with one half of an EPR pair.  A Kramers-Kronig
receiver measures both quadratures and picks up one extra vacuum unit from the
image band, so after shot-noise normalization it is described by the
heterodyne formulas; ``detection='dd'`` is an alias for ``'heterodyne'``.

Two independent paths compute the symplectic eigenvalues: closed forms
(:func:`symplectic_channel`, :func:`symplectic_conditional`) and explicit
covariance matrices (:func:`build_conditional_covariance`), which serve as a
cross-check of each other.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import constants, stats

from .channel import ChannelSegment, QanTopology, path_channel

HOMODYNE = "homodyne"
HETERODYNE = "heterodyne"
DD = "dd"
DETECTIONS = (HOMODYNE, HETERODYNE, DD)

EIG_TOL = 1e-9


@dataclass(frozen=True)
class SecurityParams:
    """Trusted and channel parameters of one link; variances in SNU.

    ``v_a`` is the per-quadrature modulation variance, ``V = v_a + 1``.
    """

    v_a: float
    t: float
    eps: float
    eta: float = 1.0
    v_el: float = 0.0
    beta: float = 0.95
    f_rep: float = 1e6
    detection: str = HETERODYNE

    def __post_init__(self) -> None:
        problems = []
        if not self.v_a >= 0:
            problems.append(f"v_a must be >= 0 (got {self.v_a})")
        if not 0 < self.t <= 1:
            problems.append(f"t must lie in (0, 1] (got {self.t})")
        if not self.eps >= 0:
            problems.append(f"eps must be >= 0 (got {self.eps})")
        if not 0 < self.eta <= 1:
            problems.append(f"eta must lie in (0, 1] (got {self.eta})")
        if not self.v_el >= 0:
            problems.append(f"v_el must be >= 0 (got {self.v_el})")
        if not 0 <= self.beta <= 1:
            problems.append(f"beta must lie in [0, 1] (got {self.beta})")
        if not self.f_rep > 0:
            problems.append(f"f_rep must be > 0 (got {self.f_rep})")
        if self.detection not in DETECTIONS:
            problems.append(f"detection must be one of {DETECTIONS} (got {self.detection!r})")
        if problems:
            raise ValueError("invalid SecurityParams: " + "; ".join(problems))

    @property
    def v(self) -> float:
        return self.v_a + 1.0

    @property
    def heterodyne(self) -> bool:
        return self.detection != HOMODYNE

    def replace(self, **changes) -> "SecurityParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class FiniteSizeParams:
    """Block sizes and failure probabilities; ``m = n_total - n_key`` symbols go to estimation."""

    n_total: float
    n_key: float
    eps_smooth: float = 1e-10
    eps_pa: float = 1e-10
    eps_pe: float = 1e-10

    def __post_init__(self) -> None:
        if not 0 < self.n_key < self.n_total:
            raise ValueError(f"need 0 < n_key < n_total (got n_key={self.n_key}, n_total={self.n_total})")
        for name in ("eps_smooth", "eps_pa", "eps_pe"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must lie in (0, 1) (got {value})")

    @classmethod
    def half(cls, n_total: float, **kwargs) -> "FiniteSizeParams":
        return cls(n_total, 0.5 * n_total, **kwargs)

    @property
    def m(self) -> float:
        return self.n_total - self.n_key

    @property
    def z(self) -> float:
        """Two-sided Gaussian quantile ``sqrt(2) erfinv(1 - eps_pe)``."""
        return float(stats.norm.isf(self.eps_pe / 2.0))


@dataclass(frozen=True)
class FiniteSizeTerms:
    delta_n: float
    t_min: float
    eps_max: float
    z: float


@dataclass(frozen=True)
class SkrResult:
    skr_bps: float
    i_ab: float
    chi_be: float
    lambdas: tuple[float, float, float, float, float]
    chi_line: float
    chi_det: float
    chi_tot: float
    finite_size_terms: FiniteSizeTerms | None = None

    @property
    def skr_clipped_bps(self) -> float:
        return max(self.skr_bps, 0.0)


def chi_values(p: SecurityParams) -> tuple[float, float, float]:
    """``(chi_line, chi_det, chi_tot)`` referred to the channel input."""
    chi_line = 1.0 / p.t - 1.0 + p.eps
    if p.heterodyne:
        chi_det = (1.0 + (1.0 - p.eta) + 2.0 * p.v_el) / p.eta
    else:
        chi_det = ((1.0 - p.eta) + p.v_el) / p.eta
    return chi_line, chi_det, chi_line + chi_det / p.t


def mutual_information_from_chi(v: float, chi_tot: float, heterodyne: bool) -> float:
    i_het = math.log2((v + chi_tot) / (1.0 + chi_tot))
    return i_het if heterodyne else 0.5 * i_het


def mutual_information(p: SecurityParams) -> float:
    """Alice-Bob information in bits per symbol."""
    return mutual_information_from_chi(p.v, chi_values(p)[2], p.heterodyne)


def g_entropy(x: float) -> float:
    """``G(x) = (x+1) log2(x+1) - x log2 x``, with ``G(0) = 0``."""
    if x < 0:
        raise ValueError(f"G(x) needs x >= 0 (got {x})")
    if x == 0:
        return 0.0
    return (x + 1.0) * math.log2(x + 1.0) - x * math.log2(x)


def _entropy_of(lam: float) -> float:
    x = (lam - 1.0) / 2.0
    if x < 0:
        if x < -EIG_TOL:
            raise ValueError(f"unphysical symplectic eigenvalue {lam}")
        x = 0.0
    return g_entropy(x)


def _pair_from_quadratic(a: float, b: float, what: str) -> tuple[float, float]:
    # roots of l^4 - a l^2 + b; second root via the product to avoid cancellation
    disc = a * a - 4.0 * b
    if abs(disc) <= 16.0 * np.finfo(float).eps * a * a:
        # rounding-level discriminant: a double root, whose square root would amplify it to ~1e-8
        disc = 0.0
    if disc < 0:
        if disc < -EIG_TOL * max(1.0, a * a):
            raise ValueError(f"{what}: negative discriminant {disc:.3e}")
        disc = 0.0
    big = 0.5 * (a + math.sqrt(disc))
    small = b / big if big > 0 else 0.0
    return math.sqrt(big), math.sqrt(small)


def _a_b(p: SecurityParams) -> tuple[float, float]:
    v, t = p.v, p.t
    chi_line = chi_values(p)[0]
    a = v * v * (1 - 2 * t) + 2 * t + t * t * (v + chi_line) ** 2
    b = t * t * (v * chi_line + 1) ** 2
    return a, b


def symplectic_channel(p: SecurityParams) -> tuple[float, float]:
    """Symplectic eigenvalues ``(l1, l2)`` of Alice and Bob's state before detection."""
    a, b = _a_b(p)
    return _pair_from_quadratic(a, b, "symplectic_channel")


def conditional_c_d(p: SecurityParams) -> tuple[float, float]:
    v, t = p.v, p.t
    chi_line, chi_det, chi_tot = chi_values(p)
    a, b = _a_b(p)
    sb = math.sqrt(b)
    denom = t * (v + chi_tot)
    if p.heterodyne:
        c = (a * chi_det ** 2 + b + 1 + 2 * chi_det * (v * sb + t * (v + chi_line)) + 2 * t * (v * v - 1)) / denom ** 2
        d = ((v + sb * chi_det) / denom) ** 2
    else:
        c = (v * sb + t * (v + chi_line) + a * chi_det) / denom
        d = sb * (v + sb * chi_det) / denom
    return c, d


def symplectic_conditional(p: SecurityParams) -> tuple[float, float, float]:
    """Symplectic eigenvalues ``(l3, l4, l5)`` of Eve's purification given Bob's outcome."""
    c, d = conditional_c_d(p)
    l3, l4 = _pair_from_quadratic(c, d, "symplectic_conditional")
    return l3, l4, 1.0


def holevo_bound(p: SecurityParams) -> float:
    """``chi_BE = S(E) - S(E|B)`` in bits per symbol."""
    l1, l2 = symplectic_channel(p)
    l3, l4, l5 = symplectic_conditional(p)
    return (_entropy_of(l1) + _entropy_of(l2)) - (_entropy_of(l3) + _entropy_of(l4) + _entropy_of(l5))


def skr_asymptotic(p: SecurityParams) -> SkrResult:
    """``f (beta I_AB - chi_BE)``; negative rates are kept, see ``skr_clipped_bps``."""
    chi_line, chi_det, chi_tot = chi_values(p)
    i_ab = mutual_information(p)
    l1, l2 = symplectic_channel(p)
    l3, l4, l5 = symplectic_conditional(p)
    chi_be = holevo_bound(p)
    return SkrResult(p.f_rep * (p.beta * i_ab - chi_be), i_ab, chi_be, (l1, l2, l3, l4, l5),
                     chi_line, chi_det, chi_tot)


def finite_size_delta(n_key: float, eps_smooth: float, eps_pa: float) -> float:
    return 7.0 * math.sqrt(math.log2(1.0 / eps_smooth) / n_key) + (2.0 / n_key) * math.log2(1.0 / eps_pa)


def worst_case_parameters(p: SecurityParams, fs: FiniteSizeParams) -> tuple[float, float]:
    """Pessimistic ``(T_min, eps_max)`` from ``m`` estimation symbols.

    Bob's normalized variance is ``sigma^2 = eta T eps + 1 + v_el``.
    """
    z = fs.z
    m = fs.m
    sigma2 = p.eta * p.t * p.eps + 1.0 + p.v_el
    delta_t = z * math.sqrt(sigma2 / (m * p.v_a))
    delta_sigma2 = z * sigma2 * math.sqrt(2.0) / math.sqrt(m)
    root = math.sqrt(p.eta * p.t) - delta_t
    if root <= 0:
        raise ValueError(f"estimation block m={m:g} too small: transmittance confidence interval reaches zero")
    t_min = root * root / p.eta
    eps_max = (sigma2 + delta_sigma2 - 1.0 - p.v_el) / (p.eta * p.t)
    return t_min, eps_max


def skr_finite_size(p: SecurityParams, fs: FiniteSizeParams) -> SkrResult:
    """``f (n/N) (beta I_AB - chi_BE - Delta(n))``.

    ``I_AB`` uses the estimated (nominal) parameters; ``chi_BE`` uses the
    worst-case ``(T_min, eps_max)``.
    """
    if p.v_a <= 0:
        raise ValueError("finite-size analysis needs v_a > 0")
    t_min, eps_max = worst_case_parameters(p, fs)
    worst = p.replace(t=t_min, eps=eps_max)
    chi_line, chi_det, chi_tot = chi_values(worst)
    i_ab = mutual_information(p)
    chi_be = holevo_bound(worst)
    delta = finite_size_delta(fs.n_key, fs.eps_smooth, fs.eps_pa)
    skr = p.f_rep * (fs.n_key / fs.n_total) * (p.beta * i_ab - chi_be - delta)
    lambdas = (*symplectic_channel(worst), *symplectic_conditional(worst))
    return SkrResult(skr, i_ab, chi_be, lambdas, chi_line, chi_det, chi_tot,
                     FiniteSizeTerms(delta, t_min, eps_max, fs.z))


# -- covariance-matrix oracle -------------------------------------------------

_Z = np.diag([1.0, -1.0])
_I2 = np.eye(2)


def _two_mode(a: float, b: float, c: float) -> np.ndarray:
    return np.block([[a * _I2, c * _Z], [c * _Z, b * _I2]])


def omega(n_modes: int) -> np.ndarray:
    return np.kron(np.eye(n_modes), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def symplectic_eigenvalues(gamma: np.ndarray) -> np.ndarray:
    """Sorted (descending) symplectic spectrum of a ``2n x 2n`` covariance matrix."""
    n = gamma.shape[0] // 2
    ev = np.abs(np.linalg.eigvals(1j * omega(n) @ gamma))
    return np.sort(ev)[::-1][::2]


@dataclass(frozen=True)
class ConditionalCovariance:
    gamma_ab1: np.ndarray
    gamma_afg: np.ndarray
    sigma_afg_b3: np.ndarray
    gamma_afg_given_b: np.ndarray

    def lambdas(self) -> tuple[float, ...]:
        l12 = symplectic_eigenvalues(self.gamma_ab1)
        l345 = symplectic_eigenvalues(self.gamma_afg_given_b)
        return (*map(float, l12), *map(float, l345))


def epr_noise_variance(p: SecurityParams) -> float:
    """Variance ``v`` of the EPR pair that purifies the detector noise (``eta < 1``)."""
    per_quadrature = 2.0 * p.v_el if p.heterodyne else p.v_el
    return 1.0 + per_quadrature / (1.0 - p.eta)


def build_conditional_covariance(p: SecurityParams) -> ConditionalCovariance:
    """Explicit covariance matrices of the entanglement-based picture.

    Mode order of the detector stage is A, F, G, B3, where B1 meets mode F0
    of an EPR pair (F0, G) on a beam splitter of transmittance ``eta``.  At
    ``eta = 1`` the splitter is dropped and the conditional eigenvalues come
    from the closed forms, since the purification diverges there.
    """
    v, t = p.v, p.t
    chi_line = chi_values(p)[0]
    gamma_ab1 = _two_mode(v, t * (v + chi_line), math.sqrt(t * (v * v - 1.0)))
    if p.eta == 1.0:
        c, d = conditional_c_d(p)
        l3, l4 = _pair_from_quadratic(c, d, "conditional limit")
        limit = np.diag([l3, l3, l4, l4, 1.0, 1.0])
        return ConditionalCovariance(gamma_ab1, limit, np.zeros((6, 2)), limit)

    w = epr_noise_variance(p)
    gamma_f0g = _two_mode(w, w, math.sqrt(w * w - 1.0))
    # modes A, B1, F0, G
    gamma = np.zeros((8, 8))
    gamma[:4, :4] = gamma_ab1
    gamma[4:, 4:] = gamma_f0g
    se, sl = math.sqrt(p.eta), math.sqrt(1.0 - p.eta)
    bs = np.array([[se, sl], [-sl, se]])  # (B1, F0) -> (B3, F)
    s = np.eye(8)
    s[2:6, 2:6] = np.kron(bs, _I2)
    gamma = s @ gamma @ s.T  # modes A, B3, F, G
    order = [0, 1, 4, 5, 6, 7, 2, 3]  # -> A, F, G, B3
    gamma = gamma[np.ix_(order, order)]
    gamma_afg = gamma[:6, :6]
    sigma = gamma[:6, 6:]
    gamma_b3 = gamma[6:, 6:]
    if p.heterodyne:
        cond = gamma_afg - sigma @ np.linalg.inv(gamma_b3 + _I2) @ sigma.T
    else:
        proj = np.diag([1.0, 0.0])
        cond = gamma_afg - sigma @ np.linalg.pinv(proj @ gamma_b3 @ proj) @ sigma.T
    return ConditionalCovariance(gamma_ab1, gamma_afg, sigma, cond)


# -- networks ------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    distance_km: float
    user: int
    detection: str
    t_eff: float
    eps: float
    skr_asym_bps: float
    skr_fs_bps: float
    i_ab: float
    chi_be: float


def qan_sweep(topology: QanTopology, per_user: Sequence[SecurityParams], distance_grid: Sequence[float],
              finite_size: FiniteSizeParams | None = None,
              alpha_db_per_km: float | None = None) -> list[SweepRow]:
    """SKR of every user as the trunk fiber length runs over ``distance_grid``.

    Each user's path is the swept trunk fiber, the topology's splitter and the
    user's own branch.  ``per_user[i].eps`` is added to any excess noise the
    segments carry.  Asymptotic rates are raw (possibly negative); finite-size
    rates are NaN when no block sizes are given or the block is too short.
    """
    grid = [float(d) for d in distance_grid]
    if not grid:
        raise ValueError("distance grid is empty")
    if len(per_user) != topology.n_users:
        raise ValueError(f"{len(per_user)} parameter sets for {topology.n_users} users")
    if alpha_db_per_km is None:
        fibers = [s for s in topology.trunk if s.kind == "fiber"]
        alpha_db_per_km = fibers[0].alpha_db_per_km if fibers else 0.2
    rows = []
    for d in grid:
        trunk = ChannelSegment.fiber(d, alpha_db_per_km)
        for user, base in enumerate(per_user):
            eff = path_channel((trunk, topology.splitter, *topology.branches[user]))
            p = base.replace(t=eff.transmittance_t, eps=base.eps + eff.excess_noise_eps)
            res = skr_asymptotic(p)
            fs_rate = math.nan
            if finite_size is not None:
                try:
                    fs_rate = skr_finite_size(p, finite_size).skr_bps
                except ValueError:
                    pass
            rows.append(SweepRow(d, user, p.detection, p.t, p.eps, res.skr_bps, fs_rate, res.i_ab, res.chi_be))
    return rows


def quantum_efficiency_from_responsivity(re: float, wavelength: float) -> float:
    """``eta = (h c / q) Re / lambda`` for responsivity in A/W and wavelength in m."""
    if not re > 0 or not wavelength > 0:
        raise ValueError("responsivity and wavelength must be > 0")
    eta = constants.h * constants.c / constants.e * re / wavelength
    if eta > 1.0 + 1e-12:
        raise ValueError(f"responsivity {re} A/W at {wavelength} m implies eta={eta:.4f} > 1")
    return eta
