"""Flat ``key = value`` run configuration with dotted sections and ``#`` comments.

An empty file gives the levitated-nanoparticle defaults: k/omega = 0.18,
eta = 0.34, nbar*gamma/omega = 0.0058 with nbar fixed by 292 K at 100 kHz,
Kalman feedback on x and p with g = 1e4 omega.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .dynamics import Estimator, FeedbackLaw, Scheme
from .errors import ConfigError, MissingKey, RangeError, UnknownKey
from .gaussian import (
    DEFAULT_ETA,
    DEFAULT_FREQ_HZ,
    DEFAULT_K_OVER_OMEGA,
    DEFAULT_NBAR_GAMMA,
    DEFAULT_T_KELVIN,
    SystemParams,
)
from .trajectories import SimConfig

SWEEPABLE = ("g", "k_over_omega", "eta", "nbar_gamma_over_omega")

_KEYS = {
    "params.k_over_omega": float,
    "params.eta": float,
    "params.gamma_over_omega": float,
    "params.nbar": float,
    "params.nbar_gamma_over_omega": float,
    "params.T_kelvin": float,
    "params.omega_hz": float,
    "scheme": str,
    "feedback.estimator": str,
    "feedback.g": float,
    "feedback.a_x": float,
    "feedback.a_p": float,
    "feedback.b_x": float,
    "feedback.b_p": float,
    "sweep.param": str,
    "sweep.min": float,
    "sweep.max": float,
    "sweep.points": int,
    "sweep.log": bool,
    "compare.schemes": str,
    "sim.g": float,
    "sim.dt": float,
    "sim.n_steps": int,
    "sim.n_traj": int,
    "sim.burn_in": int,
    "sim.seed": int,
    "sim.workers": int,
    "sim.dump_dir": str,
    "sim.dump_count": int,
    "output.path": str,
    "output.format": str,
}


@dataclass(frozen=True)
class SweepSpec:
    param: str = "g"
    lo: float = 1e-2
    hi: float = 1e4
    points: int = 60
    log: bool = True

    def values(self) -> list[float]:
        if self.points == 1:
            return [self.lo]
        if self.log:
            a, b = math.log10(self.lo), math.log10(self.hi)
            return [10 ** (a + (b - a) * i / (self.points - 1)) for i in range(self.points)]
        return [self.lo + (self.hi - self.lo) * i / (self.points - 1) for i in range(self.points)]


@dataclass(frozen=True)
class ParamSpec:
    """Raw parameter inputs, kept so sweeps can vary one of them."""

    k_over_omega: float = DEFAULT_K_OVER_OMEGA
    eta: float = DEFAULT_ETA
    nbar_gamma_over_omega: float | None = DEFAULT_NBAR_GAMMA
    T_kelvin: float = DEFAULT_T_KELVIN
    omega_hz: float = DEFAULT_FREQ_HZ
    gamma_over_omega: float | None = None
    nbar: float | None = None

    def build(self, **overrides) -> SystemParams:
        spec = {**self.__dict__, **overrides}
        if spec["gamma_over_omega"] is not None and "nbar_gamma_over_omega" in overrides:
            if not spec["nbar"]:
                raise RangeError("params.nbar", "sweeping nbar*gamma needs nbar > 0")
            spec["gamma_over_omega"] = overrides["nbar_gamma_over_omega"] / spec["nbar"]
        if spec["gamma_over_omega"] is not None:
            return SystemParams(gamma=spec["gamma_over_omega"], nbar=spec["nbar"],
                                k=spec["k_over_omega"], eta=spec["eta"])
        return SystemParams.from_bath_product(spec["k_over_omega"], spec["eta"], spec["nbar_gamma_over_omega"],
                                              spec["T_kelvin"], spec["omega_hz"])


@dataclass(frozen=True)
class FeedbackSpec:
    estimator: Estimator = Estimator.KALMAN_XP
    g: float = 1e4
    explicit: dict = field(default_factory=dict)

    def law(self, g: float | None = None) -> FeedbackLaw:
        """Law at gain ``g`` (default ``self.g``); explicit gains override the convention."""
        base = FeedbackLaw.with_gain(self.estimator, self.g if g is None else g)
        if not self.explicit:
            return base
        gains = dict(a_x=base.a_x, a_p=base.a_p, b_x=base.b_x, b_p=base.b_p)
        gains.update(self.explicit)
        return FeedbackLaw(self.estimator, **gains)


@dataclass(frozen=True)
class RunConfig:
    params: ParamSpec = field(default_factory=ParamSpec)
    scheme: Scheme = Scheme.QND_POSITION
    feedback: FeedbackSpec = field(default_factory=FeedbackSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    compare_schemes: tuple[Scheme, ...] = (
        Scheme.QND_POSITION, Scheme.ANNIHILATION_HOMODYNE, Scheme.DUAL_NO_DAMP,
    )
    sim: SimConfig = field(default_factory=lambda: SimConfig(dt=2.5e-4, n_steps=16000, n_traj=10000))
    sim_g: float = 5.0
    workers: int = 1
    dump_dir: str | None = None
    dump_count: int = 0
    output_path: str | None = None
    output_format: str = "csv"

    def system(self) -> SystemParams:
        return self.params.build()


def _convert(key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
        return raw
    except ValueError:
        raise RangeError(key, f"cannot read {raw!r} as {kind.__name__}") from None


class _Values(dict):
    """Typed values keyed by canonical name; ``written`` remembers the spelling used."""

    def __init__(self):
        super().__init__()
        self.written = {}


def read_pairs(text: str) -> _Values:
    """Parse the flat text into typed values, rejecting unknown and repeated keys.

    Parameter keys may drop their ``params.`` prefix.
    """
    values = _Values()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        canonical = key if key in _KEYS else f"params.{key}"
        if canonical not in _KEYS:
            raise UnknownKey(key, "unknown configuration key")
        if canonical in values:
            raise ConfigError(key, "given more than once")
        values[canonical] = _convert(key, raw.strip('"').strip("'"), _KEYS[canonical])
        values.written[canonical] = key
    return values


def _name(v, key: str) -> str:
    return getattr(v, "written", {}).get(key, key)


def _check(v, key, ok, message):
    if not ok:
        raise RangeError(_name(v, key), message)


def _params(v: dict) -> ParamSpec:
    k = v.get("params.k_over_omega", DEFAULT_K_OVER_OMEGA)
    eta = v.get("params.eta", DEFAULT_ETA)
    _check(v, "params.k_over_omega", k >= 0, f"must be >= 0, got {k}")
    _check(v, "params.eta", 0 < eta <= 1, f"must lie in (0, 1], got {eta}")
    direct = [key for key in ("params.gamma_over_omega", "params.nbar") if key in v]
    product = [key for key in ("params.nbar_gamma_over_omega", "params.T_kelvin", "params.omega_hz") if key in v]
    if direct and product:
        raise ConfigError(_name(v, direct[0]), f"conflicts with {_name(v, product[0])}; give one bath parameterization")
    if direct:
        for key in ("params.gamma_over_omega", "params.nbar"):
            if key not in v:
                raise MissingKey(key, f"required together with {_name(v, direct[0])}")
        gamma, nbar = v["params.gamma_over_omega"], v["params.nbar"]
        _check(v, "params.gamma_over_omega", gamma >= 0, f"must be >= 0, got {gamma}")
        _check(v, "params.nbar", nbar >= 0, f"must be >= 0, got {nbar}")
        return ParamSpec(k_over_omega=k, eta=eta, nbar_gamma_over_omega=None, gamma_over_omega=gamma, nbar=nbar)
    ng = v.get("params.nbar_gamma_over_omega", DEFAULT_NBAR_GAMMA)
    T = v.get("params.T_kelvin", DEFAULT_T_KELVIN)
    f = v.get("params.omega_hz", DEFAULT_FREQ_HZ)
    _check(v, "params.nbar_gamma_over_omega", ng >= 0, f"must be >= 0, got {ng}")
    _check(v, "params.T_kelvin", T > 0, f"must be > 0, got {T}")
    _check(v, "params.omega_hz", f > 0, f"must be > 0, got {f}")
    return ParamSpec(k_over_omega=k, eta=eta, nbar_gamma_over_omega=ng, T_kelvin=T, omega_hz=f)


def parse_scheme(key: str, raw: str) -> Scheme:
    try:
        return Scheme.parse(raw)
    except ValueError as exc:
        raise RangeError(key, str(exc)) from None


def parse_scheme_list(key: str, raw: str) -> tuple[Scheme, ...]:
    names = [part for part in raw.split(",") if part.strip()]
    if not names:
        raise RangeError(key, "needs at least one scheme")
    return tuple(parse_scheme(key, name) for name in names)


def _feedback(v: dict) -> FeedbackSpec:
    try:
        estimator = Estimator.parse(v.get("feedback.estimator", "kalman_xp"))
    except ValueError as exc:
        raise RangeError("feedback.estimator", str(exc)) from None
    g = v.get("feedback.g", 1e4)
    _check(v, "feedback.g", g >= 0, f"must be >= 0, got {g}")
    explicit = {name: v[f"feedback.{name}"] for name in ("a_x", "a_p", "b_x", "b_p") if f"feedback.{name}" in v}
    if estimator is Estimator.DIRECT:
        for name in ("a_p", "b_p"):
            _check(v, f"feedback.{name}", explicit.get(name, 0.0) == 0.0, "direct feedback only uses a_x and b_x")
    return FeedbackSpec(estimator, g, explicit)


def _sweep(v: dict) -> SweepSpec:
    param = v.get("sweep.param", "g")
    _check(v, "sweep.param", param in SWEEPABLE, f"must be one of {SWEEPABLE}, got {param!r}")
    default_lo, default_hi = (1e-2, 1e4) if param == "g" else (None, None)
    if default_lo is None:
        for key in ("sweep.min", "sweep.max"):
            if key not in v:
                raise MissingKey(key, f"required when sweeping {param}")
    spec = SweepSpec(
        param=param,
        lo=v.get("sweep.min", default_lo),
        hi=v.get("sweep.max", default_hi),
        points=v.get("sweep.points", 60),
        log=v.get("sweep.log", True),
    )
    return validate_sweep(spec, v)


def validate_sweep(spec: SweepSpec, v=None) -> SweepSpec:
    _check(v, "sweep.points", spec.points >= 1, f"must be >= 1, got {spec.points}")
    _check(v, "sweep.max", spec.hi >= spec.lo, f"must be >= sweep.min ({spec.lo}), got {spec.hi}")
    if spec.log:
        _check(v, "sweep.min", spec.lo > 0, f"log sweeps need positive bounds, got {spec.lo}")
    if spec.param == "eta":
        _check(v, "sweep.min", spec.lo > 0, "eta must stay in (0, 1]")
        _check(v, "sweep.max", spec.hi <= 1, "eta must stay in (0, 1]")
    elif spec.param in ("g", "k_over_omega", "nbar_gamma_over_omega"):
        _check(v, "sweep.min", spec.lo >= 0, f"{spec.param} must be >= 0")
    return spec


def _sim(v: dict) -> tuple[SimConfig, float, int, str | None, int]:
    dt = v.get("sim.dt", 2.5e-4)
    n_steps = v.get("sim.n_steps", 16000)
    n_traj = v.get("sim.n_traj", 10000)
    burn_in = v.get("sim.burn_in")
    seed = v.get("sim.seed", 0)
    _check(v, "sim.dt", dt > 0, f"must be > 0, got {dt}")
    _check(v, "sim.n_steps", n_steps >= 1, f"must be >= 1, got {n_steps}")
    _check(v, "sim.n_traj", n_traj >= 1, f"must be >= 1, got {n_traj}")
    _check(v, "sim.burn_in", burn_in is None or burn_in >= 0, f"must be >= 0, got {burn_in}")
    _check(v, "sim.seed", 0 <= seed < 2**64, "must fit in 64 unsigned bits")
    workers = v.get("sim.workers", 1)
    _check(v, "sim.workers", workers >= 1, f"must be >= 1, got {workers}")
    g = v.get("sim.g", 5.0)
    _check(v, "sim.g", g >= 0, f"must be >= 0, got {g}")
    dump_dir = v.get("sim.dump_dir")
    dump_count = v.get("sim.dump_count", 1 if dump_dir else 0)
    _check(v, "sim.dump_count", dump_count >= 0, f"must be >= 0, got {dump_count}")
    config = SimConfig(dt=dt, n_steps=n_steps, n_traj=n_traj, burn_in=burn_in, seed=seed)
    return config, g, workers, dump_dir, dump_count


def parse_config(text: str) -> RunConfig:
    """Validated run configuration; absent keys take the reproduction defaults.

    Raises:
        UnknownKey, MissingKey, RangeError: each carries the offending key in ``.key``.
    """
    v = read_pairs(text)
    fmt = v.get("output.format", "csv")
    _check(v, "output.format", fmt in ("csv", "text"), f"must be csv or text, got {fmt!r}")
    sim, sim_g, workers, dump_dir, dump_count = _sim(v)
    compare = parse_scheme_list("compare.schemes", v["compare.schemes"]) if "compare.schemes" in v \
        else RunConfig.compare_schemes
    return RunConfig(
        params=_params(v),
        scheme=parse_scheme("scheme", v["scheme"]) if "scheme" in v else Scheme.QND_POSITION,
        feedback=_feedback(v),
        sweep=_sweep(v),
        compare_schemes=compare,
        sim=sim,
        sim_g=sim_g,
        workers=workers,
        dump_dir=dump_dir,
        dump_count=dump_count,
        output_path=v.get("output.path"),
        output_format=fmt,
    )
