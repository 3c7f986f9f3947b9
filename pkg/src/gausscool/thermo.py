"""Heat, work, information rates and second-law margins at an operating point.

Every rate is evaluated analytically from stage matrices with the
determinant calculus ``d det = tr[adj(s) ds]`` and ``dS = f'(nu) d det / (2 nu)``.
Margins are stored as ``rhs - lhs`` so that a satisfied bound has margin >= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    Estimator,
    FeedbackLaw,
    OperatingPoint,
    Scheme,
    moment_rhs,
    sigma_c_rhs,
)
from .errors import NotSteady, UnsupportedEstimator, UnsupportedScheme
from .gaussian import (
    CovarianceMatrix,
    GaussianMoments,
    SystemParams,
    decompose,
    entropy_rate,
    occupation,
    validate,
)

STEADY_TOL = 1e-10

# Margin keys, in the order the CLI reports them.
MARGIN_NAMES = (
    "kinetic_bound",      # transfer entropy bounds the kinetic-temperature work sum
    "bath_bound",         # transfer entropy bounds the bath-temperature work
    "kinetic_vs_bath",    # kinetic-temperature sum dominates the bath-temperature term
    "flow_bound",         # information flow minus backaction bounds the kinetic sum
    "flow_vs_transfer",   # transfer entropy bounds the information flow term
    "cooling_limit",      # occupation stays above the conditional occupation
)


def heat_rate(moments: GaussianMoments, params: SystemParams) -> float:
    """Energy per unit time flowing in from the bath, omega * gamma * (nbar - <n>)."""
    validate(moments.cov)
    return params.omega * params.gamma * (params.nbar - occupation(moments))


def work_matrix(cov_m: CovarianceMatrix, cov_c: CovarianceMatrix, law: FeedbackLaw,
                params: SystemParams, scheme: Scheme) -> np.ndarray:
    """Feedback plus backaction stages of d Sigma / dt."""
    c = sigma_c_rhs(cov_c, params, scheme)
    m = moment_rhs(cov_m, cov_c, law, params, scheme)
    return c.feedback + c.backaction + m.feedback + m.backaction


def work_rates(total: CovarianceMatrix, cov_m: CovarianceMatrix, cov_c: CovarianceMatrix,
               law: FeedbackLaw, params: SystemParams, scheme: Scheme) -> tuple[float, float, float]:
    """Extracted work rates ``(w_u, w_v, w_ext)`` along the principal axes of ``total``.

    Backaction heating counts as negative extracted work.
    """
    validate(total)
    M = work_matrix(cov_m, cov_c, law, params, scheme)
    dec = decompose(total, params)
    u, v = np.array(dec.u_vec), np.array(dec.v_vec)
    half = 0.5 * params.omega
    w_u = -half * float(u @ M @ u)
    w_v = -half * float(v @ M @ v)
    w_ext = -half * float(np.trace(M))
    return w_u, w_v, w_ext


def qct_rate(cov_c: CovarianceMatrix, params: SystemParams, scheme: Scheme) -> float:
    """QC-transfer entropy rate: entropy removed from the conditional state by the measurement stage."""
    return -entropy_rate(cov_c, sigma_c_rhs(cov_c, params, scheme).measurement)


def s_ba_rate(cov_c: CovarianceMatrix, params: SystemParams, scheme: Scheme = Scheme.QND_POSITION) -> float:
    """Entropy production of the bare position-measurement backaction ``diag(0, 2k)``."""
    if scheme not in (Scheme.QND_POSITION, Scheme.PURE_MEASUREMENT):
        raise UnsupportedScheme(f"backaction entropy is defined for QND position measurement, not {scheme.value}")
    return entropy_rate(cov_c, sigma_c_rhs(cov_c, params, scheme).backaction)


def qci_flow_rate(total: CovarianceMatrix, cov_m: CovarianceMatrix, cov_c: CovarianceMatrix,
                  law: FeedbackLaw, params: SystemParams, scheme: Scheme = Scheme.QND_POSITION) -> float:
    """QC information flow for Kalman feedback.

    Entropy rate of the averaged state under its full flow, minus the rate of
    the conditional state under bath, hamiltonian and backaction stages.
    """
    if not law.estimator.is_kalman:
        raise UnsupportedEstimator("the information flow needs a Kalman estimate")
    c = sigma_c_rhs(cov_c, params, scheme)
    m = moment_rhs(cov_m, cov_c, law, params, scheme)
    full = (c + m).total
    system_part = c.bath + c.hamiltonian + c.backaction
    return entropy_rate(total, full) - entropy_rate(cov_c, system_part)


def cooling_limit(cov_c: CovarianceMatrix) -> float:
    """Occupation of the conditional state, the floor for any feedback law."""
    validate(cov_c)
    return 0.5 * (cov_c.sxx + cov_c.spp) - 0.5


@dataclass(frozen=True)
class RateReport:
    """All steady-state thermodynamic and information quantities of one operating point.

    ``margins`` maps each name in ``MARGIN_NAMES`` to ``rhs - lhs`` or to
    ``None`` where the quantity is not defined for the scheme or estimator.
    """

    q_dot: float
    w_ext: float
    w_u: float
    w_v: float
    Tu: float
    Tv: float
    TG: float
    T: float
    i_qct: float
    i_qci_s: float | None
    s_ba: float | None
    n_occ: float
    n_min: float
    kinetic_sum: float
    kinetic_sum_detflow: float
    margins: dict = field(default_factory=dict)

    @property
    def bath_term(self) -> float:
        """``w_ext / T``; zero for a zero-temperature bath only if no work is extracted."""
        if self.T == 0:
            return math.copysign(math.inf, self.w_ext) if self.w_ext else 0.0
        return self.w_ext / self.T

    @property
    def ratio(self) -> float:
        return self.kinetic_sum / self.i_qct if self.i_qct else math.nan


def _div(a: float, b: float) -> float:
    if b == 0:
        return 0.0 if a == 0 else math.copysign(math.inf, a)
    return a / b


def inequality_report(op: OperatingPoint, *, require_steady: bool = True) -> RateReport:
    """Evaluate every rate and bound at ``op``.

    Raises:
        NotSteady: ``op.residual`` exceeds ``STEADY_TOL`` and ``require_steady`` is set.
        UnsupportedScheme: the pure-measurement scheme has no bath to compare against.
    """
    if op.scheme is Scheme.PURE_MEASUREMENT:
        raise UnsupportedScheme("pure measurement has no steady operating point")
    if require_steady and not op.residual < STEADY_TOL:
        raise NotSteady("operating point is not stationary", op.residual)
    params, scheme, law = op.params, op.scheme, op.law
    total = validate(op.total)
    dec = decompose(total, params)

    M = work_matrix(op.cov_m, op.cov_c, law, params, scheme)
    w_u, w_v, w_ext = work_rates(total, op.cov_m, op.cov_c, law, params, scheme)
    kinetic_sum = _div(w_u, dec.Tu) + _div(w_v, dec.Tv)
    kinetic_sum_detflow = -entropy_rate(total, M)
    q_dot = heat_rate(GaussianMoments.centered(total), params)
    i_qct = qct_rate(op.cov_c, params, scheme)
    T = params.T
    bath_term = _div(w_ext, T)

    kalman_qnd = law.estimator is not Estimator.DIRECT and scheme is Scheme.QND_POSITION
    if kalman_qnd:
        s_ba = s_ba_rate(op.cov_c, params, scheme)
        i_qci = qci_flow_rate(total, op.cov_m, op.cov_c, law, params, scheme)
        available = -i_qci - s_ba
        flow_bound = available - kinetic_sum
        flow_vs_transfer = i_qct - available
    else:
        s_ba = i_qci = flow_bound = flow_vs_transfer = None

    n_occ = 0.5 * total.trace - 0.5
    n_min = cooling_limit(op.cov_c)
    margins = {
        "kinetic_bound": i_qct - kinetic_sum,
        "bath_bound": i_qct - bath_term,
        "kinetic_vs_bath": kinetic_sum - bath_term,
        "flow_bound": flow_bound,
        "flow_vs_transfer": flow_vs_transfer,
        "cooling_limit": n_occ - n_min,
    }
    return RateReport(
        q_dot=q_dot, w_ext=w_ext, w_u=w_u, w_v=w_v, Tu=dec.Tu, Tv=dec.Tv, TG=dec.TG, T=T,
        i_qct=i_qct, i_qci_s=i_qci, s_ba=s_ba, n_occ=n_occ, n_min=n_min,
        kinetic_sum=kinetic_sum, kinetic_sum_detflow=kinetic_sum_detflow, margins=margins,
    )

