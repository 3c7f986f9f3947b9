"""Deterministic moment flows for continuously monitored, feedback-cooled oscillators.

Three covariance matrices describe the zero-mean operating point:

* ``cov_c``   conditional covariance (Riccati flow, independent of the record),
* ``cov_m``   covariance of the conditional means across records,
* ``Sigma``   covariance of the averaged state, ``cov_c + cov_m``.

Every right-hand side is returned split into stages (bath, hamiltonian,
feedback, backaction, conditioning) so thermodynamic rates can integrate
over exactly the stages they need. Symmetric 2x2 matrices are packed as the
3-vector ``(xx, pp, xp)`` where a linear solve is needed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import EfficiencyZero, NoConvergence, NotHurwitz, UnsupportedEstimator, UnsupportedScheme
from .gaussian import CovarianceMatrix, SystemParams, validate

HURWITZ_TOL = 1e-12
MARCH_TOL = 1e-10
NEWTON_TOL = 1e-12


class Scheme(enum.Enum):
    """Measurement unraveling that drives the conditional moments."""

    QND_POSITION = "qnd"
    ANNIHILATION_HOMODYNE = "homodyne"
    DUAL_NO_DAMP = "dual"
    PURE_MEASUREMENT = "pure"

    @classmethod
    def parse(cls, name: str) -> "Scheme":
        key = name.strip().lower().replace("-", "").replace("_", "")
        for scheme in cls:
            if key in (scheme.value, scheme.name.lower().replace("_", ""), _CAMEL[scheme]):
                return scheme
        raise ValueError(f"unknown scheme {name!r}; choose from {[s.value for s in cls]}")


_CAMEL = {
    Scheme.QND_POSITION: "qndposition",
    Scheme.ANNIHILATION_HOMODYNE: "annihilationhomodyne",
    Scheme.DUAL_NO_DAMP: "dualnodamp",
    Scheme.PURE_MEASUREMENT: "puremeasurement",
}


class Estimator(enum.Enum):
    KALMAN_XP = "kalman_xp"
    KALMAN_X_ONLY = "kalman_x_only"
    DIRECT = "direct"

    @classmethod
    def parse(cls, name: str) -> "Estimator":
        key = name.strip().lower().replace("-", "_")
        aliases = {"kalmanxp": cls.KALMAN_XP, "kalmanxonly": cls.KALMAN_X_ONLY, "xp": cls.KALMAN_XP,
                   "x_only": cls.KALMAN_X_ONLY, "xonly": cls.KALMAN_X_ONLY}
        for est in cls:
            if key == est.value:
                return est
        if key.replace("_", "") in aliases:
            return aliases[key.replace("_", "")]
        raise ValueError(f"unknown estimator {name!r}; choose from {[e.value for e in cls]}")

    @property
    def is_kalman(self) -> bool:
        return self is not Estimator.DIRECT


@dataclass(frozen=True)
class FeedbackLaw:
    """Linear feedback on the estimate.

    For Kalman estimators the feedback Hamiltonian is
    ``-(a_x <x>_c + a_p <p>_c) p + (b_x <x>_c + b_p <p>_c) x``, so the means are
    pushed by ``-[[a_x, a_p], [b_x, b_p]] @ (<x>_c, <p>_c)``. For direct
    feedback the raw record increment ``dy`` displaces the state by
    ``-(a_x, b_x) dy``; ``a_p`` and ``b_p`` must be zero.
    """

    estimator: Estimator = Estimator.KALMAN_XP
    a_x: float = 0.0
    a_p: float = 0.0
    b_x: float = 0.0
    b_p: float = 0.0

    def __post_init__(self):
        if self.estimator is Estimator.DIRECT and (self.a_p != 0 or self.b_p != 0):
            raise ValueError("direct feedback only uses the a_x and b_x gains")

    @classmethod
    def kalman_xp(cls, g: float) -> "FeedbackLaw":
        return cls(Estimator.KALMAN_XP, a_x=g, b_p=g)

    @classmethod
    def kalman_x_only(cls, g: float) -> "FeedbackLaw":
        return cls(Estimator.KALMAN_X_ONLY, b_x=g, b_p=g)

    @classmethod
    def direct(cls, a_x: float, b_x: float = 0.0) -> "FeedbackLaw":
        return cls(Estimator.DIRECT, a_x=a_x, b_x=b_x)

    @classmethod
    def with_gain(cls, estimator: Estimator, g: float) -> "FeedbackLaw":
        if estimator is Estimator.KALMAN_XP:
            return cls.kalman_xp(g)
        if estimator is Estimator.KALMAN_X_ONLY:
            return cls.kalman_x_only(g)
        return cls.direct(g)

    @property
    def drift(self) -> np.ndarray:
        """Feedback part of the drift acting on the conditional means."""
        if self.estimator is Estimator.DIRECT:
            return np.array([[-self.a_x, 0.0], [-self.b_x, 0.0]])
        return np.array([[-self.a_x, -self.a_p], [-self.b_x, -self.b_p]])

    @property
    def kick(self) -> np.ndarray:
        """Displacement per unit record for direct feedback."""
        return np.array([self.a_x, self.b_x])

    @property
    def max_gain(self) -> float:
        return max(abs(self.a_x), abs(self.a_p), abs(self.b_x), abs(self.b_p))


@dataclass(frozen=True)
class StageRates:
    """Time derivative of a covariance matrix split by physical origin.

    ``measurement`` is backaction plus conditioning. Feedback never touches the
    conditional covariance, so it is zero in conditional flows.
    """

    bath: np.ndarray
    hamiltonian: np.ndarray
    feedback: np.ndarray
    backaction: np.ndarray
    conditioning: np.ndarray

    @property
    def measurement(self) -> np.ndarray:
        return self.backaction + self.conditioning

    @property
    def total(self) -> np.ndarray:
        return self.bath + self.hamiltonian + self.feedback + self.backaction + self.conditioning

    def __add__(self, other: "StageRates") -> "StageRates":
        return StageRates(
            self.bath + other.bath,
            self.hamiltonian + other.hamiltonian,
            self.feedback + other.feedback,
            self.backaction + other.backaction,
            self.conditioning + other.conditioning,
        )


_Z = np.zeros((2, 2))
_E = np.array([[1.0, 0.0], [0.0, 0.0]])


def sym_vec(m) -> np.ndarray:
    m = np.asarray(m)
    return np.array([m[0, 0], m[1, 1], 0.5 * (m[0, 1] + m[1, 0])])


def sym_mat(v) -> np.ndarray:
    return np.array([[v[0], v[2]], [v[2], v[1]]])


def lyapunov_operator(F) -> np.ndarray:
    """3x3 matrix of ``S -> F S + S F^T`` on packed symmetric matrices."""
    (f11, f12), (f21, f22) = np.asarray(F, dtype=float)
    return np.array([
        [2 * f11, 0.0, 2 * f12],
        [0.0, 2 * f22, 2 * f21],
        [f21, f12, f11 + f22],
    ])


def _sandwich(F, s) -> np.ndarray:
    return F @ s + s @ F.T


def hamiltonian_drift(params: SystemParams) -> np.ndarray:
    w = params.omega
    return np.array([[0.0, w], [-w, 0.0]])


def mean_damping(params: SystemParams, scheme: Scheme) -> float:
    """Decay rate of the means from the bath and, for homodyne on a, the measurement."""
    if scheme is Scheme.PURE_MEASUREMENT:
        return 0.0
    rate = 0.5 * params.gamma
    if scheme is Scheme.ANNIHILATION_HOMODYNE:
        rate += params.k
    return rate


def free_drift(params: SystemParams, scheme: Scheme) -> np.ndarray:
    """Drift of the means without feedback."""
    if scheme is Scheme.PURE_MEASUREMENT:
        return np.zeros((2, 2))
    return hamiltonian_drift(params) - mean_damping(params, scheme) * np.eye(2)


def constant_diffusion(params: SystemParams, scheme: Scheme) -> np.ndarray:
    """State-independent diffusion of the conditional covariance (bath + backaction)."""
    k = params.k
    if scheme in (Scheme.QND_POSITION, Scheme.PURE_MEASUREMENT):
        ba = np.diag([0.0, 2 * k])
    else:
        ba = k * np.eye(2)
    if scheme is Scheme.PURE_MEASUREMENT:
        return ba
    return params.gamma * params.thermal_variance * np.eye(2) + ba


@dataclass(frozen=True)
class Channel:
    """One monitored output.

    Conditioning removes ``rate * w w^T`` from the conditional covariance with
    ``w = cov_c[:, 0] - offset``; the conditional means receive
    ``sqrt(rate) * w * dW`` and the record reads ``dy = <x>_c dt + record_scale * dW``.
    """

    rate: float
    offset: tuple[float, float]
    record_scale: float

    def gain_vector(self, cov: CovarianceMatrix) -> np.ndarray:
        return np.array([cov.sxx - self.offset[0], cov.sxp - self.offset[1]])


def channels(params: SystemParams, scheme: Scheme) -> tuple[Channel, ...]:
    keta = params.k * params.eta
    if keta == 0:
        return ()
    if scheme in (Scheme.QND_POSITION, Scheme.PURE_MEASUREMENT):
        return (Channel(8 * keta, (0.0, 0.0), 1 / math.sqrt(8 * keta)),)
    if scheme is Scheme.ANNIHILATION_HOMODYNE:
        return (Channel(4 * keta, (0.5, 0.0), 1 / math.sqrt(8 * keta)),)
    # a and a^dagger monitored together; the +-1/2 offsets cancel in the
    # cross term and leave 4 k eta (sxx^2 + 1/4) on the xx entry.
    scale = 1 / (2 * math.sqrt(keta))
    return (
        Channel(2 * keta, (0.5, 0.0), scale),
        Channel(2 * keta, (-0.5, 0.0), scale),
    )


def conditioning_source(cov_c: CovarianceMatrix, params: SystemParams, scheme: Scheme) -> np.ndarray:
    """Information gain per unit time, sum of ``rate * w w^T``; enters cov_m with + and cov_c with -."""
    v = np.zeros((2, 2))
    for ch in channels(params, scheme):
        w = ch.gain_vector(cov_c)
        v += ch.rate * np.outer(w, w)
    return v


def sigma_c_rhs(cov_c: CovarianceMatrix, params: SystemParams, scheme: Scheme) -> StageRates:
    """Stage-split Riccati flow of the conditional covariance."""
    validate(cov_c)
    s = cov_c.matrix()
    k = params.k
    if scheme is Scheme.PURE_MEASUREMENT:
        bath = _Z.copy()
        ham = _Z.copy()
    else:
        bath = -params.gamma * s + params.gamma * params.thermal_variance * np.eye(2)
        ham = _sandwich(hamiltonian_drift(params), s)
    if scheme is Scheme.ANNIHILATION_HOMODYNE:
        backaction = -2 * k * s + k * np.eye(2)
    elif scheme is Scheme.DUAL_NO_DAMP:
        backaction = k * np.eye(2)
    else:
        backaction = np.diag([0.0, 2 * k])
    conditioning = -conditioning_source(cov_c, params, scheme)
    return StageRates(bath, ham, _Z.copy(), backaction, conditioning)


def _kalman_only(law: FeedbackLaw):
    if not law.estimator.is_kalman:
        raise UnsupportedEstimator("direct feedback uses direct_moment_rhs")


def sigma_m_rhs(
    cov_m: CovarianceMatrix,
    cov_c: CovarianceMatrix,
    law: FeedbackLaw,
    params: SystemParams,
    scheme: Scheme,
) -> StageRates:
    """Stage-split flow of the covariance of the Kalman estimates."""
    _kalman_only(law)
    validate(cov_m, allow_sub_heisenberg=True)
    validate(cov_c)
    m = cov_m.matrix()
    if scheme is Scheme.PURE_MEASUREMENT:
        bath = _Z.copy()
        ham = _Z.copy()
    else:
        bath = -params.gamma * m
        ham = _sandwich(hamiltonian_drift(params), m)
    feedback = _sandwich(law.drift, m)
    if scheme is Scheme.ANNIHILATION_HOMODYNE:
        backaction = -2 * params.k * m
    else:
        backaction = _Z.copy()
    conditioning = conditioning_source(cov_c, params, scheme)
    return StageRates(bath, ham, feedback, backaction, conditioning)


def _direct_kick_source(cov_c: CovarianceMatrix, law: FeedbackLaw, params: SystemParams) -> np.ndarray:
    """Extra diffusion of the means from feeding back dy, relative to the innovation source alone."""
    c = law.kick
    keta8 = 8 * params.k * params.eta
    if not np.any(c):
        return _Z.copy()
    if keta8 == 0:
        raise EfficiencyZero("direct feedback with k*eta = 0 injects infinite noise")
    s = np.array([cov_c.sxx, cov_c.sxp])
    return -(np.outer(s, c) + np.outer(c, s)) + np.outer(c, c) / keta8


def direct_noise_vector(cov_c: CovarianceMatrix, law: FeedbackLaw, params: SystemParams) -> np.ndarray:
    """B such that the means diffuse as B dW under direct feedback."""
    keta8 = 8 * params.k * params.eta
    if keta8 == 0:
        if np.any(law.kick):
            raise EfficiencyZero("direct feedback with k*eta = 0 injects infinite noise")
        return np.zeros(2)
    root = math.sqrt(keta8)
    return np.array([root * cov_c.sxx, root * cov_c.sxp]) - law.kick / root


def direct_moment_rhs(
    cov_m: CovarianceMatrix,
    cov_c: CovarianceMatrix,
    law: FeedbackLaw,
    params: SystemParams,
) -> StageRates:
    """Closed flow of cov_m under direct (Markovian, zero-delay) feedback of dy.

    Constant kick coefficients make the Stratonovich and Ito readings of the
    fed-back record coincide, so the means obey a linear Ito SDE with drift
    ``free_drift + law.drift`` and noise vector ``direct_noise_vector``.
    """
    if law.estimator is not Estimator.DIRECT:
        raise UnsupportedEstimator("direct_moment_rhs needs a direct feedback law")
    scheme = Scheme.QND_POSITION
    validate(cov_m, allow_sub_heisenberg=True)
    validate(cov_c)
    m = cov_m.matrix()
    feedback = _sandwich(law.drift, m) + _direct_kick_source(cov_c, law, params)
    return StageRates(
        -params.gamma * m,
        _sandwich(hamiltonian_drift(params), m),
        feedback,
        _Z.copy(),
        conditioning_source(cov_c, params, scheme),
    )


def estimate_drift(law: FeedbackLaw, params: SystemParams, scheme: Scheme = Scheme.QND_POSITION) -> np.ndarray:
    """Full 2x2 drift of the conditional means (free motion plus feedback)."""
    return free_drift(params, scheme) + law.drift


def stability_eigenvalues(law: FeedbackLaw, params: SystemParams, scheme: Scheme = Scheme.QND_POSITION) -> np.ndarray:
    """Eigenvalues of the linear cov_m flow, as complex ``(lam1, lam2, lam3)``.

    With drift F the flow ``F S + S F^T`` has eigenvalues ``tr F`` and
    ``tr F +- sqrt((f11 - f22)^2 + 4 f12 f21)``.
    """
    F = estimate_drift(law, params, scheme)
    tr = F[0, 0] + F[1, 1]
    disc = complex((F[0, 0] - F[1, 1]) ** 2 + 4 * F[0, 1] * F[1, 0])
    root = np.sqrt(disc)
    return np.array([complex(tr), tr + root, tr - root])


def _filter_jacobian(cov_c: CovarianceMatrix, params: SystemParams, scheme: Scheme) -> np.ndarray:
    F = free_drift(params, scheme)
    h = np.array([1.0, 0.0])
    for ch in channels(params, scheme):
        F = F - ch.rate * np.outer(ch.gain_vector(cov_c), h)
    return lyapunov_operator(F)


def _riccati_vec(y, params, scheme):
    s = sym_mat(y)
    F = free_drift(params, scheme)
    out = F @ s + s @ F.T + constant_diffusion(params, scheme)
    for ch in channels(params, scheme):
        w = np.array([y[0] - ch.offset[0], y[2] - ch.offset[1]])
        out = out - ch.rate * np.outer(w, w)
    return sym_vec(out)


def _residual(cov: CovarianceMatrix, params, scheme) -> float:
    return float(np.linalg.norm(sym_vec(sigma_c_rhs(cov, params, scheme).total)))


def _newton(y, params, scheme, iterations=50):
    """Newton iteration on the Riccati residual; returns (y, residual)."""
    residual = float(np.linalg.norm(_riccati_vec(y, params, scheme)))
    for _ in range(iterations):
        if residual < NEWTON_TOL or not np.isfinite(residual):
            break
        J = _filter_jacobian(CovarianceMatrix(*y), params, scheme)
        try:
            y = y - np.linalg.solve(J, _riccati_vec(y, params, scheme))
        except np.linalg.LinAlgError:
            return y, math.inf
        residual = float(np.linalg.norm(_riccati_vec(y, params, scheme)))
    return y, residual


def _accept(y, residual, params, scheme) -> bool:
    if not residual < NEWTON_TOL:
        return False
    cov = CovarianceMatrix(*map(float, y))
    if cov.sxx <= 0 or cov.spp <= 0 or cov.det < 0.25 - 1e-12:
        return False
    return bool(np.max(np.linalg.eigvals(_filter_jacobian(cov, params, scheme)).real) < 0)


def steady_sigma_c(params: SystemParams, scheme: Scheme, *, max_time: float = 1e12) -> CovarianceMatrix:
    """Stationary conditional covariance.

    Marches the Riccati flow from the thermal state with LSODA over horizons
    growing tenfold, stopping once the residual is below ``MARCH_TOL``. After
    every segment a Newton polish is attempted and kept only if it lands on a
    physical, attracting root; weakly damped flows otherwise need horizons of
    many thousands of periods. The result does not depend on the feedback law.

    Raises:
        NoConvergence: no bounded stationary point, or the polish stalls.
    """
    if scheme is Scheme.PURE_MEASUREMENT:
        raise NoConvergence("pure measurement has no stationary conditional covariance", math.inf)
    if params.gamma == 0 and params.k * params.eta == 0:
        raise NoConvergence("needs gamma > 0 or k*eta > 0 for a bounded stationary point", math.inf)

    def rhs(_t, y):
        return _riccati_vec(y, params, scheme)

    def jac(_t, y):
        return _filter_jacobian(CovarianceMatrix(*y), params, scheme)

    y = CovarianceMatrix.thermal(params.nbar).vec()
    residual = float(np.linalg.norm(rhs(0.0, y)))
    t0, horizon = 0.0, 10.0 / params.omega
    while True:
        polished, polished_res = _newton(y, params, scheme)
        if _accept(polished, polished_res, params, scheme):
            return CovarianceMatrix(*map(float, polished))
        if residual < MARCH_TOL or horizon > max_time:
            break
        sol = solve_ivp(rhs, (t0, t0 + horizon), y, method="LSODA", jac=jac,
                        rtol=1e-9, atol=1e-12, t_eval=[t0 + horizon])
        if not sol.success:
            raise NoConvergence(f"time march failed: {sol.message}", residual)
        y = sol.y[:, -1]
        t0 += horizon
        horizon *= 10.0
        residual = float(np.linalg.norm(rhs(0.0, y)))
    raise NoConvergence("no physical attracting stationary point found", polished_res)


def _check_hurwitz(L: np.ndarray):
    eigs = np.linalg.eigvals(L)
    if np.max(eigs.real) >= -HURWITZ_TOL:
        raise NotHurwitz(
            f"estimate flow is not Hurwitz (max Re lambda = {np.max(eigs.real):.3e})", eigs
        )


def steady_sigma_m(
    cov_c: CovarianceMatrix,
    law: FeedbackLaw,
    params: SystemParams,
    scheme: Scheme = Scheme.QND_POSITION,
) -> CovarianceMatrix:
    """Stationary covariance of the estimates from one 3x3 linear solve.

    Handles direct feedback too (QND scheme only), using the direct noise source.

    Raises:
        NotHurwitz: the estimate flow has no unique attracting steady state.
    """
    validate(cov_c)
    F = estimate_drift(law, params, scheme)
    if law.estimator is Estimator.DIRECT:
        if scheme is not Scheme.QND_POSITION:
            raise UnsupportedScheme("direct feedback is modelled for QND position measurement only")
        b = direct_noise_vector(cov_c, law, params)
        source = np.outer(b, b)
    else:
        source = conditioning_source(cov_c, params, scheme)
    L = lyapunov_operator(F)
    _check_hurwitz(L)
    s = np.linalg.solve(L, -sym_vec(source))
    return CovarianceMatrix(*map(float, s))


def moment_rhs(cov_m, cov_c, law, params, scheme) -> StageRates:
    """Dispatch to the Kalman or direct estimate flow."""
    if law.estimator is Estimator.DIRECT:
        if scheme is not Scheme.QND_POSITION:
            raise UnsupportedScheme("direct feedback is modelled for QND position measurement only")
        return direct_moment_rhs(cov_m, cov_c, law, params)
    return sigma_m_rhs(cov_m, cov_c, law, params, scheme)


@dataclass(frozen=True)
class OperatingPoint:
    """Zero-mean state of the feedback loop: conditional and estimate covariances."""

    cov_c: CovarianceMatrix
    cov_m: CovarianceMatrix
    law: FeedbackLaw
    params: SystemParams
    scheme: Scheme
    residual: float = field(default=0.0, compare=False)

    @property
    def total(self) -> CovarianceMatrix:
        return self.cov_c + self.cov_m

    def stages(self) -> tuple[StageRates, StageRates]:
        c = sigma_c_rhs(self.cov_c, self.params, self.scheme)
        m = moment_rhs(self.cov_m, self.cov_c, self.law, self.params, self.scheme)
        return c, m

    def unconditional_stages(self) -> StageRates:
        """Stages of d Sigma / dt; the conditioning parts cancel."""
        c, m = self.stages()
        return c + m

    def steady_residual(self) -> float:
        """Largest of the conditional and estimate residuals, each relative to its flow's scale."""
        c, m = self.stages()
        rc = float(np.linalg.norm(sym_vec(c.total)))
        # The estimate flow is L s + v; scale by |L||s| and |v| separately,
        # since under direct feedback the drift and kick terms cancel inside a stage.
        s = self.cov_m.vec()
        L = lyapunov_operator(estimate_drift(self.law, self.params, self.scheme))
        if self.scheme is Scheme.ANNIHILATION_HOMODYNE:
            L = L - 2 * self.params.k * np.eye(3)
        rm_vec = sym_vec(m.total)
        source = rm_vec - L @ s
        scale = max(1.0, float(np.max(np.abs(L) @ np.abs(s))), float(np.max(np.abs(source))))
        rm = float(np.linalg.norm(rm_vec)) / scale
        return max(rc, rm)


def operating_point(
    params: SystemParams,
    scheme: Scheme,
    law: FeedbackLaw,
    cov_c: CovarianceMatrix | None = None,
) -> OperatingPoint:
    """Solve both steady states; pass ``cov_c`` to reuse a conditional solve across gains."""
    if cov_c is None:
        cov_c = steady_sigma_c(params, scheme)
    cov_m = steady_sigma_m(cov_c, law, params, scheme)
    op = OperatingPoint(cov_c, cov_m, law, params, scheme)
    return OperatingPoint(cov_c, cov_m, law, params, scheme, residual=op.steady_residual())
