"""Single-mode Gaussian states: parameters, covariance algebra, entropy and
the squeezed-thermal (kinetic temperature) decomposition.

Units are natural, hbar = k_B = 1, and the oscillator frequency defaults to
omega = 1 so that rates come out in units of omega and energies in units of
hbar * omega.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants

from .errors import HeisenbergViolation, NonPositive

HEISENBERG_TOL = 1e-12
PURE_TOL = 1e-12


def nbar_from_kelvin(T_kelvin: float, freq_hz: float) -> float:
    """Bose occupation of a mode with frequency ``freq_hz`` (omega / 2 pi) at ``T_kelvin``."""
    if T_kelvin < 0 or freq_hz <= 0:
        raise ValueError("need T_kelvin >= 0 and freq_hz > 0")
    if T_kelvin == 0:
        return 0.0
    x = constants.hbar * 2.0 * math.pi * freq_hz / (constants.k * T_kelvin)
    return 1.0 / math.expm1(x)


@dataclass(frozen=True)
class SystemParams:
    """Physical environment of the oscillator.

    Attributes:
        omega: oscillator angular frequency.
        gamma: bath dissipation rate.
        nbar: bath occupation number.
        k: measurement rate.
        eta: detection efficiency in (0, 1].
    """

    omega: float = 1.0
    gamma: float = 0.0
    nbar: float = 0.0
    k: float = 0.0
    eta: float = 1.0

    def __post_init__(self):
        for name in ("omega", "gamma", "nbar", "k", "eta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.omega <= 0:
            raise ValueError(f"omega must be > 0, got {self.omega}")
        if self.gamma < 0 or self.nbar < 0 or self.k < 0:
            raise ValueError("gamma, nbar and k must be non-negative")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")

    @property
    def T(self) -> float:
        """Bath temperature from detailed balance, nbar/(nbar+1) = exp(-omega/T)."""
        if self.nbar == 0:
            return 0.0
        return self.omega / math.log1p(1.0 / self.nbar)

    @property
    def thermal_variance(self) -> float:
        return self.nbar + 0.5

    @classmethod
    def from_bath_product(cls, k, eta, nbar_gamma, T_kelvin=292.0, freq_hz=1e5, omega=1.0):
        """Build parameters from ``nbar * gamma / omega`` plus a physical temperature.

        Only the product nbar*gamma enters the dynamics when nbar >> 1; the
        (T_kelvin, freq_hz) pair just fixes nbar through detailed balance.
        """
        nbar = nbar_from_kelvin(T_kelvin, freq_hz)
        if nbar == 0:
            raise ValueError("nbar_gamma parameterization needs T_kelvin > 0")
        return cls(omega=omega, gamma=nbar_gamma * omega / nbar, nbar=nbar, k=k * omega, eta=eta)

    def replace(self, **changes) -> "SystemParams":
        fields = dict(omega=self.omega, gamma=self.gamma, nbar=self.nbar, k=self.k, eta=self.eta)
        fields.update(changes)
        return SystemParams(**fields)


DEFAULT_K_OVER_OMEGA = 0.18
DEFAULT_ETA = 0.34
DEFAULT_NBAR_GAMMA = 0.0058
DEFAULT_T_KELVIN = 292.0
DEFAULT_FREQ_HZ = 1e5


def default_params() -> SystemParams:
    """Levitated-nanoparticle operating point used throughout the reproduction runs."""
    return SystemParams.from_bath_product(
        DEFAULT_K_OVER_OMEGA, DEFAULT_ETA, DEFAULT_NBAR_GAMMA, DEFAULT_T_KELVIN, DEFAULT_FREQ_HZ
    )


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric 2x2 covariance in (x, p) with symmetrized cross term."""

    sxx: float
    spp: float
    sxp: float = 0.0

    @classmethod
    def from_matrix(cls, m) -> "CovarianceMatrix":
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), float(m[1, 1]), float(0.5 * (m[0, 1] + m[1, 0])))

    @classmethod
    def thermal(cls, nbar: float) -> "CovarianceMatrix":
        return cls(nbar + 0.5, nbar + 0.5, 0.0)

    @classmethod
    def zero(cls) -> "CovarianceMatrix":
        return cls(0.0, 0.0, 0.0)

    @property
    def det(self) -> float:
        return self.sxx * self.spp - self.sxp * self.sxp

    @property
    def trace(self) -> float:
        return self.sxx + self.spp

    @property
    def nu(self) -> float:
        """Symplectic eigenvalue sqrt(det)."""
        return math.sqrt(max(self.det, 0.0))

    def matrix(self) -> np.ndarray:
        return np.array([[self.sxx, self.sxp], [self.sxp, self.spp]])

    def adjugate(self) -> np.ndarray:
        return np.array([[self.spp, -self.sxp], [-self.sxp, self.sxx]])

    def vec(self) -> np.ndarray:
        return np.array([self.sxx, self.spp, self.sxp])

    def __add__(self, other: "CovarianceMatrix") -> "CovarianceMatrix":
        return CovarianceMatrix(self.sxx + other.sxx, self.spp + other.spp, self.sxp + other.sxp)

    def __sub__(self, other: "CovarianceMatrix") -> "CovarianceMatrix":
        return CovarianceMatrix(self.sxx - other.sxx, self.spp - other.spp, self.sxp - other.sxp)

    def rotated(self, phi: float) -> "CovarianceMatrix":
        c, s = math.cos(phi), math.sin(phi)
        r = np.array([[c, -s], [s, c]])
        return CovarianceMatrix.from_matrix(r @ self.matrix() @ r.T)


@dataclass(frozen=True)
class MeanVector:
    mx: float = 0.0
    mp: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.mx) and math.isfinite(self.mp)):
            raise ValueError("mean vector entries must be finite")


@dataclass(frozen=True)
class GaussianMoments:
    mean: MeanVector
    cov: CovarianceMatrix

    @classmethod
    def centered(cls, cov: CovarianceMatrix) -> "GaussianMoments":
        return cls(MeanVector(), cov)


def validate(cov: CovarianceMatrix, allow_sub_heisenberg: bool = False) -> CovarianceMatrix:
    """Check physicality of ``cov`` and return it unchanged.

    With ``allow_sub_heisenberg`` the matrix only has to be positive
    semidefinite, which is the right test for the covariance of conditional
    means. Otherwise the variances must be positive and det >= 1/4.

    Raises:
        NonPositive: a variance (or, for the relaxed check, the determinant) is negative.
        HeisenbergViolation: det < 1/4 beyond round-off.
    """
    values = (cov.sxx, cov.spp, cov.sxp)
    if not all(math.isfinite(v) for v in values):
        raise NonPositive(f"non-finite covariance entries {values}")
    if allow_sub_heisenberg:
        scale = max(1.0, abs(cov.sxx * cov.spp))
        if cov.sxx < 0 or cov.spp < 0 or cov.det < -HEISENBERG_TOL * scale:
            raise NonPositive(f"covariance {values} is not positive semidefinite")
        return cov
    if cov.sxx <= 0 or cov.spp <= 0:
        raise NonPositive(f"variances must be positive, got sxx={cov.sxx}, spp={cov.spp}")
    if cov.det < 0.25 - HEISENBERG_TOL:
        raise HeisenbergViolation(f"det = {cov.det!r} < 1/4 for covariance {values}")
    return cov


def _excess(cov: CovarianceMatrix) -> tuple[float, float]:
    """Return (nu, nu - 1/2) with the difference computed without cancellation."""
    det = cov.det
    nu = math.sqrt(max(det, 0.25))
    return nu, max(det - 0.25, 0.0) / (nu + 0.5)


def entropy_of_nu(nu: float) -> float:
    """Von Neumann entropy (nats) of a single-mode Gaussian state with symplectic eigenvalue nu."""
    if nu - 0.5 <= PURE_TOL:
        return 0.0
    a, b = nu + 0.5, nu - 0.5
    return a * math.log(a) - b * math.log(b)


def entropy_slope(nu: float) -> float:
    """dS/dnu = ln((nu + 1/2)/(nu - 1/2)); infinite for a pure state."""
    excess = nu - 0.5
    if excess <= PURE_TOL:
        return math.inf
    return math.log1p(1.0 / excess)


def entropy(cov: CovarianceMatrix) -> float:
    validate(cov)
    nu, excess = _excess(cov)
    if excess <= PURE_TOL:
        return 0.0
    return (nu + 0.5) * math.log(nu + 0.5) - excess * math.log(excess)


def entropy_rate(cov: CovarianceMatrix, flow) -> float:
    """Rate of change of S(cov) when cov moves along ``flow`` (a 2x2 matrix).

    Uses d det = tr[adj(cov) d cov] and dS = f'(nu) d det / (2 nu). For a
    pure state the slope diverges; a flow that leaves det unchanged to
    round-off then gives 0, anything else +-inf.
    """
    validate(cov)
    ddet = float(np.sum(cov.adjugate() * np.asarray(flow, dtype=float).T))
    nu, excess = _excess(cov)
    if excess <= PURE_TOL:
        if abs(ddet) <= 1e-12:
            return 0.0
        return math.copysign(math.inf, ddet)
    return math.log1p(1.0 / excess) * ddet / (2.0 * nu)


@dataclass(frozen=True)
class ThermalDecomposition:
    """Squeezed-thermal form of a covariance matrix.

    ``sigma_uu >= sigma_vv`` are the covariance eigenvalues along the unit
    vectors ``u_vec`` and ``v_vec``; ``theta`` is the angle of ``u_vec`` from
    the x axis. ``TG`` is the temperature of the underlying Gibbs state and
    ``Tu``, ``Tv`` are the kinetic temperatures along the two axes.
    """

    nu: float
    TG: float
    r: float
    theta: float
    sigma_uu: float
    sigma_vv: float
    Tu: float
    Tv: float
    u_vec: tuple[float, float]
    v_vec: tuple[float, float]

    @property
    def is_pure(self) -> bool:
        return self.TG == 0.0

    def reconstruct(self) -> CovarianceMatrix:
        c, s = math.cos(self.theta), math.sin(self.theta)
        r = np.array([[c, -s], [s, c]])
        return CovarianceMatrix.from_matrix(r @ np.diag([self.sigma_uu, self.sigma_vv]) @ r.T)


def decompose(cov: CovarianceMatrix, params: SystemParams) -> ThermalDecomposition:
    validate(cov)
    half_sum = 0.5 * (cov.sxx + cov.spp)
    half_diff = 0.5 * (cov.sxx - cov.spp)
    radius = math.hypot(half_diff, cov.sxp)
    sigma_uu = half_sum + radius
    sigma_vv = cov.det / sigma_uu
    if radius == 0.0:
        theta = 0.0
    else:
        theta = 0.5 * math.atan2(2.0 * cov.sxp, cov.sxx - cov.spp)
    u_vec = (math.cos(theta), math.sin(theta))
    v_vec = (-math.sin(theta), math.cos(theta))

    nu, excess = _excess(cov)
    r = 0.5 * math.log(sigma_uu / nu)
    if excess <= PURE_TOL:
        TG = Tu = Tv = 0.0
    else:
        TG = params.omega / math.log1p(1.0 / excess)
        Tu = sigma_uu / nu * TG
        Tv = sigma_vv / nu * TG
    return ThermalDecomposition(
        nu=nu, TG=TG, r=r, theta=theta, sigma_uu=sigma_uu, sigma_vv=sigma_vv,
        Tu=Tu, Tv=Tv, u_vec=u_vec, v_vec=v_vec,
    )


def occupation(moments: GaussianMoments) -> float:
    """Mean phonon number <a^dagger a> including the coherent part."""
    m, c = moments.mean, moments.cov
    return 0.5 * (c.sxx + c.spp + m.mx * m.mx + m.mp * m.mp) - 0.5
