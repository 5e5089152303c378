"""Nonlinear inverted pendulum on a cart with motor and sensor imperfections.

Equations of motion (uniform rod of mass m and length l pivoted on a cart of
mass M, viscous friction Cf on the cart):

    (M + m) p'' + (m l / 2) (theta'' cos theta - theta'^2 sin theta) = F - Cf p'
    (m l / 2) p'' cos theta + (m l^2 / 3) theta'' - (m g l / 2) sin theta = 0

theta is measured from the upright vertical and is positive when the rod
leans toward +p. F comes from the motor drive model in :func:`motor_force`.
"""

import math
from dataclasses import astuple, dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as kern


class IntegrationError(RuntimeError):
    """The integrator produced a non-finite state."""


class State(NamedTuple):
    p: float = 0.0
    v: float = 0.0
    theta: float = 0.0
    omega: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)

    @classmethod
    def from_array(cls, x) -> "State":
        return cls(*(float(c) for c in x))


@dataclass(frozen=True)
class PlantParams:
    M: float = 1.0            # cart mass, kg
    m: float = 0.1            # rod mass, kg
    l: float = 0.3            # rod length, m
    g: float = 9.81
    Cv: float = 4.0           # motor force constant, N/V
    Cf: float = 5.0           # cart friction (dynamic + static coupling), N s/m
    v_neutral: float = 2.5
    v_deadzone: float = 0.1   # dead-zone half-width, V
    v_min: float = 0.0
    v_max: float = 5.0
    f_max: float = 10.0
    rail_half: float = 0.5
    theta_max: float = 0.5

    def __post_init__(self):
        for name in ("M", "m", "l", "g", "Cv", "f_max", "rail_half", "theta_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"PlantParams.{name} must be positive")
        if self.Cf < 0:
            raise ValueError("PlantParams.Cf must be non-negative")
        if not self.v_min < self.v_neutral < self.v_max:
            raise ValueError("need v_min < v_neutral < v_max")
        if self.v_deadzone < 0:
            raise ValueError("PlantParams.v_deadzone must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


@dataclass(frozen=True)
class SensorParams:
    offset_p: float = 0.0
    offset_theta: float = 0.0
    quant_p: float = 0.0
    quant_theta: float = 0.0
    noise_std_p: float = 0.0
    noise_std_theta: float = 0.0

    def __post_init__(self):
        for name in ("quant_p", "quant_theta", "noise_std_p", "noise_std_theta"):
            if getattr(self, name) < 0:
                raise ValueError(f"SensorParams.{name} must be non-negative")

    @property
    def noisy(self) -> bool:
        return self.noise_std_p > 0 or self.noise_std_theta > 0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


@dataclass(frozen=True)
class SimConfig:
    dt_sample: float = 0.01
    dt_internal: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.dt_internal <= self.dt_sample:
            raise ValueError("need 0 < dt_internal <= dt_sample")
        ratio = self.dt_sample / self.dt_internal
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("dt_sample must be an integer multiple of dt_internal")

    @property
    def substeps(self) -> int:
        return int(round(self.dt_sample / self.dt_internal))


class StepResult(NamedTuple):
    state: State
    saturated: bool


def motor_force(voltage: float, params: PlantParams) -> float:
    """Drive force for a commanded voltage: clamp, dead zone, gain, force clamp."""
    return kern.motor_force(float(voltage), params.as_array())


def derivatives(state, force: float, params: PlantParams) -> np.ndarray:
    p, v, th, om = (float(c) for c in state)
    return np.array(kern.deriv(p, v, th, om, float(force), params.as_array()))


def step(state, voltage: float, params: PlantParams, cfg: SimConfig, audit=None) -> StepResult:
    """Advance one sampling interval with the voltage held constant (RK4 substeps)."""
    x = np.array(state, dtype=np.float64)
    if audit is None:
        audit = np.zeros(3)
    saturated, finite = kern.advance(x, float(voltage), params.as_array(), cfg.dt_internal,
                                     cfg.substeps, audit)
    if not finite:
        raise IntegrationError(f"non-finite state {x} after stepping from {tuple(state)}")
    return StepResult(State.from_array(x), bool(saturated))


def measure(state, sensors: SensorParams, rng: np.random.Generator | None = None,
            previous: State | None = None, dt: float = 0.01) -> State:
    """Sensor reading of ``state``.

    Position and angle get offset, Gaussian noise and quantization. Velocities
    are backward differences against ``previous`` (the prior measured sample);
    without one they read zero.
    """
    z = rng.standard_normal(2) if (rng is not None and sensors.noisy) else (0.0, 0.0)
    x = np.array(state, dtype=np.float64)
    meas = np.zeros(4)
    kern.measure(x, meas, sensors.as_array(), float(z[0]), float(z[1]), dt)
    if previous is None:
        meas[1] = meas[3] = 0.0
    else:
        meas[1] = (meas[0] - previous.p) / dt
        meas[3] = (meas[2] - previous.theta) / dt
    return State.from_array(meas)


def total_energy(state, params: PlantParams) -> float:
    """Kinetic plus potential energy, zero potential at the pivot height."""
    p, v, th, om = (float(c) for c in state)
    a = 0.5 * params.m * params.l
    j = params.m * params.l ** 2 / 3.0
    kinetic = 0.5 * (params.M + params.m) * v * v + a * math.cos(th) * v * om + 0.5 * j * om * om
    return kinetic + a * params.g * math.cos(th)


def noise_block(seed: int, episode: int, n: int) -> np.ndarray:
    """Standard normals for one episode, shape (n, 2), from a Philox stream keyed by (seed, episode).

    Row k is the draw for sample k, so values never depend on evaluation order.
    """
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, episode])
    gen = np.random.Generator(np.random.Philox(ss))
    return gen.standard_normal((n, 2))


@dataclass
class Plant:
    """A stateful plant instance; owns its true state and a substep safety audit."""

    params: PlantParams = field(default_factory=PlantParams)
    sim: SimConfig = field(default_factory=SimConfig)
    x: np.ndarray = field(default_factory=lambda: np.zeros(4))
    audit: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def __post_init__(self):
        self.x = np.array(self.x, dtype=np.float64)
        self._pp = self.params.as_array()

    @property
    def state(self) -> State:
        return State.from_array(self.x)

    def advance(self, voltage: float) -> bool:
        saturated, finite = kern.advance(self.x, float(voltage), self._pp, self.sim.dt_internal,
                                         self.sim.substeps, self.audit)
        if not finite:
            raise IntegrationError(f"non-finite plant state {self.x} at t={self.t:.3f}")
        self.t += self.sim.dt_sample
        return bool(saturated)

    @property
    def max_abs_p(self) -> float:
        return float(self.audit[kern.A_MAXP])

    @property
    def max_abs_theta(self) -> float:
        return float(self.audit[kern.A_MAXTH])

    @property
    def contacts(self) -> int:
        return int(self.audit[kern.A_CONTACTS])
