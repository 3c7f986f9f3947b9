"""Monte-Carlo ensembles of conditional means under Kalman or direct feedback.

The conditional covariance is deterministic, so it is integrated once (RK4)
and shared by every trajectory; the means follow Euler-Maruyama. Each
trajectory draws from its own Philox stream keyed by ``(seed, index)``, and
trajectories are processed in fixed-size blocks whose results are reduced in
index order, so output does not depend on the number of workers.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import (
    Estimator,
    FeedbackLaw,
    Scheme,
    _riccati_vec,
    channels,
    free_drift,
    stability_eigenvalues,
    steady_sigma_c,
    steady_sigma_m,
)
from .errors import EfficiencyZero, EmptySample, StiffnessGuard, UnsupportedScheme
from .gaussian import CovarianceMatrix, MeanVector, SystemParams, validate

STIFFNESS_LIMIT = 0.1
BLOCK_SIZE = 512
DUMP_COLUMNS = ("t", "mx", "mp", "sxx_c", "spp_c", "sxp_c", "dy")


@dataclass(frozen=True)
class SimConfig:
    """Discretization and sampling of an ensemble run.

    ``burn_in`` is a number of steps; ``None`` picks ``default_burn_in``.
    """

    dt: float = 2.5e-4
    n_steps: int = 16000
    n_traj: int = 1000
    burn_in: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1 or self.n_traj < 1:
            raise ValueError("n_steps and n_traj must be at least 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class TrajectoryState:
    mean_c: MeanVector
    cov_c: CovarianceMatrix
    t: float = 0.0
    dy: float = math.nan


@dataclass(frozen=True)
class EnsembleStats:
    """Sample moments of the conditional means after burn-in.

    ``sigma_m`` holds second moments about zero (the means have zero
    expectation), each trajectory contributing its time average; standard
    errors are taken across trajectories. ``innovation_var`` is the sample
    variance of ``(dy - mx dt) / sqrt(dt)``.
    """

    sigma_m: CovarianceMatrix
    sigma_m_se: tuple[float, float, float]
    mean: tuple[float, float]
    mean_se: tuple[float, float]
    n_occ: float
    n_occ_se: float
    innovation_var: float
    innovation_var_se: float
    cov_c: CovarianceMatrix
    n_traj: int
    samples_per_traj: int
    burn_in: int


def check_stiffness(dt: float, law: FeedbackLaw, params: SystemParams, scheme: Scheme, cov_c: CovarianceMatrix):
    """Raise ``StiffnessGuard`` when ``dt`` times the fastest rate exceeds the limit."""
    fastest = float(np.max(np.abs(stability_eigenvalues(law, params, scheme))))
    fastest = max(fastest, 8 * params.k * params.eta * abs(cov_c.sxx))
    if dt * fastest > STIFFNESS_LIMIT:
        raise StiffnessGuard(
            f"dt = {dt:g} too large: fastest rate {fastest:.4g} needs dt <= {STIFFNESS_LIMIT / fastest:.3g}"
        )


def default_burn_in(config: SimConfig, law: FeedbackLaw, params: SystemParams, scheme: Scheme) -> int:
    """Steps covering ten relaxation times of the slowest mode or of the gain."""
    slowest = float(np.min(np.abs(stability_eigenvalues(law, params, scheme).real)))
    rates = [r for r in (slowest, law.max_gain) if r > 0]
    if not rates:
        return config.n_steps
    return int(math.ceil(10.0 / min(rates) / config.dt))


def _supported(law: FeedbackLaw, scheme: Scheme):
    if scheme is Scheme.PURE_MEASUREMENT:
        raise UnsupportedScheme("trajectories need a scheme with a stationary filter")
    if law.estimator is Estimator.DIRECT:
        if scheme is not Scheme.QND_POSITION:
            raise UnsupportedScheme("direct feedback is modelled for QND position measurement only")


def _rk4(y, dt, params, scheme):
    k1 = _riccati_vec(y, params, scheme)
    k2 = _riccati_vec(y + 0.5 * dt * k1, params, scheme)
    k3 = _riccati_vec(y + 0.5 * dt * k2, params, scheme)
    k4 = _riccati_vec(y + dt * k3, params, scheme)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _mean_update(mx, mp, dW, cov_vec, law, params, scheme, dt):
    """One Euler-Maruyama step of the means; works on scalars or arrays.

    ``dW`` is a sequence with one increment (scalar or array) per channel.
    Returns ``(mx, mp, dy)`` where ``dy`` is the record increment, averaged
    over channels when there are two.
    """
    F = free_drift(params, scheme)
    fb = law.drift
    A = F + fb if law.estimator.is_kalman else F
    new_x = mx + (A[0, 0] * mx + A[0, 1] * mp) * dt
    new_p = mp + (A[1, 0] * mx + A[1, 1] * mp) * dt
    chans = channels(params, scheme)
    if not chans:
        dy = mx * math.nan
        return new_x, new_p, dy
    dy = 0.0
    sxx, sxp = cov_vec[0], cov_vec[2]
    for ch, dw in zip(chans, dW):
        root = math.sqrt(ch.rate)
        new_x = new_x + root * (sxx - ch.offset[0]) * dw
        new_p = new_p + root * (sxp - ch.offset[1]) * dw
        dy = dy + (mx * dt + ch.record_scale * dw)
    dy = dy / len(chans)
    if law.estimator is Estimator.DIRECT:
        new_x = new_x - law.a_x * dy
        new_p = new_p - law.b_x * dy
    return new_x, new_p, dy


def n_noises(params: SystemParams, scheme: Scheme) -> int:
    return max(1, len(channels(params, scheme)))


def kalman_step(state: TrajectoryState, dW, law: FeedbackLaw, params: SystemParams,
                scheme: Scheme, dt: float) -> TrajectoryState:
    """Advance one trajectory by ``dt`` with Wiener increment(s) ``dW``.

    ``dW`` is a float, or a pair of floats for the two-channel scheme.
    """
    if law.estimator is Estimator.DIRECT:
        raise ValueError("use direct_step for direct feedback")
    _supported(law, scheme)
    check_stiffness(dt, law, params, scheme, state.cov_c)
    return _step(state, dW, law, params, scheme, dt)


def direct_step(state: TrajectoryState, dW, law: FeedbackLaw, params: SystemParams, dt: float) -> TrajectoryState:
    """QND step with the record of the same step fed back as a displacement ``-(a_x, b_x) dy``.

    With constant gains the Stratonovich and Ito readings of the fed-back
    record coincide, so a left-point update is exact in distribution.
    """
    if law.estimator is not Estimator.DIRECT:
        raise ValueError("direct_step needs a direct feedback law")
    if params.k * params.eta == 0 and np.any(law.kick):
        raise EfficiencyZero("direct feedback with k*eta = 0 feeds back pure noise")
    check_stiffness(dt, law, params, Scheme.QND_POSITION, state.cov_c)
    return _step(state, dW, law, params, Scheme.QND_POSITION, dt)


def _step(state, dW, law, params, scheme, dt):
    dW = np.atleast_1d(np.asarray(dW, dtype=float))
    cov_vec = state.cov_c.vec()
    mx, mp, dy = _mean_update(state.mean_c.mx, state.mean_c.mp, list(dW), cov_vec, law, params, scheme, dt)
    cov = CovarianceMatrix(*map(float, _rk4(cov_vec, dt, params, scheme)))
    validate(cov)
    return TrajectoryState(MeanVector(float(mx), float(mp)), cov, state.t + dt, float(dy))


def covariance_path(cov0: CovarianceMatrix, n_steps: int, dt: float, params, scheme) -> np.ndarray:
    """RK4 path of the shared conditional covariance, shape ``(n_steps + 1, 3)``."""
    path = np.empty((n_steps + 1, 3))
    path[0] = cov0.vec()
    for i in range(n_steps):
        path[i + 1] = _rk4(path[i], dt, params, scheme)
    return path


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one trajectory, independent of scheduling."""
    return np.random.Generator(np.random.Philox(key=(seed << 64) | index))


@dataclass(frozen=True)
class _Job:
    start: int
    stop: int
    config: SimConfig
    burn_in: int
    law: FeedbackLaw
    params: SystemParams
    scheme: Scheme
    path: np.ndarray
    dump_dir: str | None
    dump_indices: frozenset


def _run_block(job: _Job):
    """Simulate trajectories ``start..stop-1``; return per-trajectory time averages."""
    cfg = job.config
    n = job.stop - job.start
    n_noise = n_noises(job.params, job.scheme)
    sqdt = math.sqrt(cfg.dt)
    noise = np.empty((n, cfg.n_steps, n_noise))
    for j in range(n):
        rng = trajectory_rng(cfg.seed, job.start + j)
        noise[j] = rng.standard_normal((cfg.n_steps, n_noise)) * sqdt

    dumps = {}
    if job.dump_dir is not None:
        for j in range(n):
            if job.start + j in job.dump_indices:
                dumps[j] = [(0.0, 0.0, 0.0, *job.path[0], math.nan)]

    mx = np.zeros(n)
    mp = np.zeros(n)
    acc = np.zeros((6, n))  # xx, pp, xp, x, p, innovation^2
    for i in range(cfg.n_steps):
        dW = [noise[:, i, c] for c in range(n_noise)]
        old_x = mx
        mx, mp, dy = _mean_update(mx, mp, dW, job.path[i], job.law, job.params, job.scheme, cfg.dt)
        if i + 1 > job.burn_in:
            acc[0] += mx * mx
            acc[1] += mp * mp
            acc[2] += mx * mp
            acc[3] += mx
            acc[4] += mp
            innov = (dy - old_x * cfg.dt) / sqdt
            acc[5] += innov * innov
        for j, rows in dumps.items():
            rows.append(((i + 1) * cfg.dt, mx[j], mp[j], *job.path[i + 1], dy[j]))

    for j, rows in dumps.items():
        _write_dump(job.dump_dir, job.start + j, rows)
    if not np.all(np.isfinite(acc[:5])):
        bad = int(np.argmax(~np.all(np.isfinite(acc[:5]), axis=0)))
        raise FloatingPointError(f"trajectory {job.start + bad} diverged")
    return acc / (cfg.n_steps - job.burn_in)


def _write_dump(directory: str, index: int, rows):
    path = os.path.join(directory, f"trajectory_{index:06d}.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DUMP_COLUMNS)
        for row in rows:
            writer.writerow([format(float(v), ".17g") for v in row])


def _mean_se(values) -> tuple[float, float]:
    values = [float(v) for v in values]
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, math.nan
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def run_ensemble(config: SimConfig, law: FeedbackLaw, params: SystemParams, scheme: Scheme = Scheme.QND_POSITION,
                 *, workers: int = 1, cov_c: CovarianceMatrix | None = None, dump_dir: str | None = None,
                 dump_indices=(), block_size: int = BLOCK_SIZE) -> EnsembleStats:
    """Simulate ``config.n_traj`` trajectories from zero means and the steady conditional covariance.

    Raises:
        EmptySample: burn-in leaves no samples.
        StiffnessGuard: ``config.dt`` too coarse for the fastest rate.
    """
    _supported(law, scheme)
    if law.estimator is Estimator.DIRECT and params.k * params.eta == 0 and np.any(law.kick):
        raise EfficiencyZero("direct feedback with k*eta = 0 feeds back pure noise")
    if cov_c is None:
        cov_c = steady_sigma_c(params, scheme)
    check_stiffness(config.dt, law, params, scheme, cov_c)
    burn_in = config.burn_in if config.burn_in is not None else default_burn_in(config, law, params, scheme)
    if burn_in >= config.n_steps:
        raise EmptySample(f"burn_in = {burn_in} steps leaves nothing of n_steps = {config.n_steps}")

    path = covariance_path(cov_c, config.n_steps, config.dt, params, scheme)
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)
    jobs = [
        _Job(s, min(s + block_size, config.n_traj), config, burn_in, law, params, scheme, path,
             dump_dir, frozenset(dump_indices))
        for s in range(0, config.n_traj, block_size)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_run_block, jobs))
    else:
        blocks = [_run_block(job) for job in jobs]
    acc = np.concatenate(blocks, axis=1)

    (sxx, sxx_se), (spp, spp_se), (sxp, sxp_se) = (_mean_se(acc[r]) for r in range(3))
    (mx, mx_se), (mp, mp_se) = _mean_se(acc[3]), _mean_se(acc[4])
    cov_end = CovarianceMatrix(*map(float, path[-1]))
    occ = 0.5 * (acc[0] + acc[1]) + 0.5 * (cov_end.sxx + cov_end.spp) - 0.5
    n_occ, n_occ_se = _mean_se(occ)
    innov, innov_se = _mean_se(acc[5])
    return EnsembleStats(
        sigma_m=CovarianceMatrix(sxx, spp, sxp),
        sigma_m_se=(sxx_se, spp_se, sxp_se),
        mean=(mx, mp),
        mean_se=(mx_se, mp_se),
        n_occ=n_occ,
        n_occ_se=n_occ_se,
        innovation_var=innov,
        innovation_var_se=innov_se,
        cov_c=cov_end,
        n_traj=config.n_traj,
        samples_per_traj=config.n_steps - burn_in,
        burn_in=burn_in,
    )


def predicted_sigma_m(law: FeedbackLaw, params: SystemParams, scheme: Scheme = Scheme.QND_POSITION,
                      cov_c: CovarianceMatrix | None = None) -> CovarianceMatrix:
    """Deterministic steady estimate covariance the ensemble should reproduce."""
    if cov_c is None:
        cov_c = steady_sigma_c(params, scheme)
    return steady_sigma_m(cov_c, law, params, scheme)

