"""Switching block for the SAFE/LEARNING tandem.

The supervisor samples the plant every ``dt_sample`` seconds. While the
observed state stays inside the hypercube around ``s0`` the LEARNING network
drives the motor; on the first sample outside it, control passes to the SAFE
controller for the rest of the episode and the time of that sample becomes
the switch time M used by the failure fitness.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as kern
from .neuro import MlpParams, V_OUT_MAX, decode_genome
from .plant import IntegrationError, Plant, PlantParams, SensorParams, SimConfig, State, noise_block
from .safe import SafeGain

SAFE, LEARNING = kern.CTRL_SAFE, kern.CTRL_LEARN
CONTROLLER_NAMES = {SAFE: "SAFE", LEARNING: "LEARNING"}


class ResetFailure(RuntimeError):
    """The SAFE controller did not bring the plant back to s0 within its budget."""


@dataclass(frozen=True)
class HypercubeLimits:
    dp: float = 0.10
    dv: float = 0.20
    dtheta: float = math.radians(5.7)
    domega: float = math.radians(115.0)

    def __post_init__(self):
        if min(astuple(self)) <= 0:
            raise ValueError("hypercube half-widths must be positive")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    def scaled(self, factor: float) -> "HypercubeLimits":
        return HypercubeLimits(*(factor * w for w in astuple(self)))

    def vertices(self, s0=(0.0, 0.0, 0.0, 0.0)) -> np.ndarray:
        signs = np.array([[(i >> b) & 1 for b in (3, 2, 1, 0)] for i in range(16)]) * 2 - 1
        return np.asarray(s0, dtype=np.float64) + signs * self.as_array()


@dataclass(frozen=True)
class FitnessWeights:
    Pw: float = 0.005
    Aw: float = math.radians(0.5)
    P_M: float = 0.5
    A_M: float = 0.5

    def __post_init__(self):
        if min(astuple(self)) <= 0:
            raise ValueError("fitness weights must be positive")

    @property
    def penalty_rate(self) -> float:
        """Worst-case integrand [(P_M/Pw)^2 + (A_M/Aw)^2], charged per second of lost time."""
        return (self.P_M / self.Pw) ** 2 + (self.A_M / self.Aw) ** 2


@dataclass(frozen=True)
class ResetTolerance:
    p: float = 0.01
    v: float = 0.02
    theta: float = 0.01
    omega: float = 0.02

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


@dataclass
class Trace:
    """Uniformly sampled record; row k is time k * dt.

    ``voltage[k]`` and ``controller[k]`` describe the command issued at sample k.
    ``observed`` is what the supervisor and LEARNING controller saw.
    """

    dt: float
    true: np.ndarray
    observed: np.ndarray
    voltage: np.ndarray
    controller: np.ndarray
    in_limits: np.ndarray

    @classmethod
    def empty(cls, rows: int, dt: float) -> "Trace":
        return cls(dt, np.zeros((rows, 4)), np.zeros((rows, 4)), np.zeros(rows),
                   np.zeros(rows, dtype=np.int64), np.zeros(rows, dtype=np.bool_))

    def truncated(self, rows: int) -> "Trace":
        return Trace(self.dt, self.true[:rows], self.observed[:rows], self.voltage[:rows],
                     self.controller[:rows], self.in_limits[:rows])

    def __len__(self) -> int:
        return len(self.voltage)

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt


@dataclass
class EpisodeResult:
    trace: Trace
    switch_time: float | None
    fitness: float
    T: float

    @property
    def switched(self) -> bool:
        return self.switch_time is not None


def in_limits(state, s0, limits: HypercubeLimits) -> bool:
    """Inclusive box test: |state_i - s0_i| <= half-width_i for all four components."""
    return bool(kern.in_box(np.asarray(state, dtype=np.float64),
                            np.asarray(s0, dtype=np.float64), limits.as_array()))


def _check_span(p, theta, dt, span):
    n = int(round(span / dt)) + 1
    if len(p) != n or len(theta) != n:
        raise ValueError(f"trace has {len(p)} samples, expected {n} covering {span} s at dt={dt}")


def tracking_integral(p, theta, dt: float, weights: FitnessWeights) -> float:
    f = (np.asarray(p) / weights.Pw) ** 2 + (np.asarray(theta) / weights.Aw) ** 2
    if len(f) < 2:
        return 0.0
    return float(dt * (0.5 * f[0] + f[1:-1].sum() + 0.5 * f[-1]))


def fitness_success(p, theta, dt: float, weights: FitnessWeights, T: float) -> float:
    """Trapezoid-rule integral of (P/Pw)^2 + (A/Aw)^2 over samples spanning [0, T]."""
    _check_span(p, theta, dt, T)
    return tracking_integral(p, theta, dt, weights)


def fitness_failure(p, theta, dt: float, M: float, weights: FitnessWeights, T: float) -> float:
    """Tracking integral up to the switch time M plus (1.1 T - M) at the worst-case error."""
    if M > T + 1e-12:
        raise ValueError(f"switch time {M} exceeds episode length {T}")
    if M < 0:
        raise ValueError("switch time must be non-negative")
    _check_span(p, theta, dt, M)
    return tracking_integral(p, theta, dt, weights) + (0.1 * T + T - M) * weights.penalty_rate


def compute_rms(p, theta) -> tuple[float, float]:
    p = np.asarray(p, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if p.size == 0 or theta.size == 0:
        raise ValueError("cannot take RMS of an empty trace")
    return float(np.sqrt(np.mean(p ** 2))), float(np.sqrt(np.mean(theta ** 2)))


_ZERO_NET = MlpParams.from_vector(np.zeros(33))


class _Segment(NamedTuple):
    rows: int
    switch_row: int
    status: int


@dataclass
class Channel:
    """Sensor path state carried across the segments of one evaluation."""

    sensors: SensorParams = field(default_factory=SensorParams)
    noise: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    observe_measured: bool = True
    meas: np.ndarray | None = None
    cursor: int = 0

    def prime(self, x):
        """Take the first sensor sample; velocities start at zero."""
        if self.meas is None:
            self.meas = np.zeros(4)
            z = self.noise[0] if len(self.noise) else (0.0, 0.0)
            kern.measure(x, self.meas, self.sensors.as_array(), z[0], z[1], 1.0)
            self.meas[1] = self.meas[3] = 0.0


def _run(plant: Plant, channel: Channel, n_steps: int, mode: int, gain: SafeGain, s0,
         limits: HypercubeLimits, tol: ResetTolerance, net: MlpParams, trace: Trace) -> _Segment:
    channel.prime(plant.x)
    rows, switch_row, status = kern.run_segment(
        plant.x, channel.meas, False, plant._pp, channel.sensors.as_array(),
        channel.noise, channel.cursor, plant.sim.dt_sample, plant.sim.substeps, n_steps, mode,
        np.asarray(gain.K, dtype=np.float64), np.asarray(s0, dtype=np.float64),
        limits.as_array(), tol.as_array(), *net.arrays(), channel.observe_measured, V_OUT_MAX,
        trace.true, trace.observed, trace.voltage, trace.controller, trace.in_limits,
        plant.audit,
    )
    # the next segment reuses this segment's final sample
    channel.cursor += rows - 1
    plant.t += (rows - 1) * plant.sim.dt_sample
    if status == kern.STATUS_BLOWUP:
        raise IntegrationError(f"plant state became non-finite near t={plant.t:.3f}s")
    return _Segment(rows, switch_row, status)


def reset_phase(plant: Plant, gain: SafeGain, s0=(0.0, 0.0, 0.0, 0.0), budget: float = 5.0,
                tol: ResetTolerance = ResetTolerance(), channel: Channel | None = None,
                limits: HypercubeLimits = HypercubeLimits()) -> float:
    """Let SAFE drive the plant toward ``s0``; returns the time taken.

    The plant is left where it ends up, not snapped onto ``s0``. Raises
    :class:`ResetFailure` if the tolerances are not met within ``budget``.
    """
    channel = channel if channel is not None else Channel(observe_measured=False)
    n = int(round(budget / plant.sim.dt_sample))
    trace = Trace.empty(n + 1, plant.sim.dt_sample)
    seg = _run(plant, channel, n, kern.MODE_RESET, gain, s0, limits, tol, _ZERO_NET, trace)
    if seg.status == kern.STATUS_RESET_FAILED:
        raise ResetFailure(f"SAFE did not reach s0 within {budget}s; ended at {plant.state}")
    return (seg.rows - 1) * plant.sim.dt_sample


def run_learning_episode(plant: Plant, learning: MlpParams | None, gain: SafeGain, s0,
                         limits: HypercubeLimits, weights: FitnessWeights, T: float,
                         channel: Channel | None = None) -> EpisodeResult:
    """One LEARNING episode of length T under supervision.

    ``learning=None`` runs the SAFE controller for the whole episode, which
    gives the baseline under identical conditions.
    """
    channel = channel if channel is not None else Channel()
    dt = plant.sim.dt_sample
    n = int(round(T / dt))
    trace = Trace.empty(n + 1, dt)
    mode = kern.MODE_SAFE if learning is None else kern.MODE_LEARN
    seg = _run(plant, channel, n, mode, gain, s0, limits, ResetTolerance(),
               learning if learning is not None else _ZERO_NET, trace)
    p, th = trace.observed[:, 0], trace.observed[:, 2]
    if seg.switch_row < 0:
        return EpisodeResult(trace, None, fitness_success(p, th, dt, weights, T), T)
    M = seg.switch_row * dt
    k = seg.switch_row + 1
    return EpisodeResult(trace, M, fitness_failure(p[:k], th[:k], dt, M, weights, T), T)


class EvalSummary(NamedTuple):
    fitness: float
    switch_time: float | None
    max_abs_p: float
    max_abs_theta: float
    contacts: int
    plant_time: float


@dataclass
class TandemEvaluator:
    """Runs complete specimen evaluations on fresh plant instances.

    One evaluation is: place the plant at ``start``, SAFE reset to ``s0``,
    a LEARNING episode of length T, then the SAFE reset that would precede
    the next specimen. Sensor noise is keyed by (sim.seed, episode id), so a
    result depends only on the genome and the episode id.
    """

    gain: SafeGain
    params: PlantParams = field(default_factory=PlantParams)
    sensors: SensorParams = field(default_factory=SensorParams)
    sim: SimConfig = field(default_factory=SimConfig)
    limits: HypercubeLimits = field(default_factory=HypercubeLimits)
    weights: FitnessWeights = field(default_factory=FitnessWeights)
    T: float = 10.0
    s0: tuple = (0.0, 0.0, 0.0, 0.0)
    start: tuple = (0.05, 0.0, 0.05, 0.0)
    reset_budget: float = 5.0
    tol: ResetTolerance = field(default_factory=ResetTolerance)
    observe_measured: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.limits.dp >= self.params.rail_half or self.limits.dtheta >= self.params.theta_max:
            raise ValueError("hypercube must lie strictly inside the plant hard stops")
        if self.weights.P_M < self.limits.dp or self.weights.A_M < self.limits.dtheta:
            raise ValueError("P_M and A_M must cover the hypercube half-widths")
        if self.T <= 0:
            raise ValueError("episode length must be positive")

    def _channel(self, episode: int, T: float) -> Channel:
        if self.sensors.noisy:
            n_reset = int(round(self.reset_budget / self.sim.dt_sample))
            rows = 2 * n_reset + int(round(T / self.sim.dt_sample)) + 3
            noise = noise_block(self.sim.seed, episode, rows)
        else:
            noise = np.zeros((0, 2))
        return Channel(self.sensors, noise, self.observe_measured)

    def episode(self, net: MlpParams | None, episode: int = 0, T: float | None = None,
                recover: bool = True) -> tuple[EpisodeResult, Plant]:
        T = self.T if T is None else T
        plant = Plant(self.params, self.sim, np.array(self.start, dtype=np.float64))
        channel = self._channel(episode, T)
        reset_phase(plant, self.gain, self.s0, self.reset_budget, self.tol, channel, self.limits)
        result = run_learning_episode(plant, net, self.gain, self.s0, self.limits, self.weights,
                                      T, channel)
        if recover:
            reset_phase(plant, self.gain, self.s0, self.reset_budget, self.tol, channel,
                        self.limits)
        return result, plant

    def evaluate(self, bits: np.ndarray, episode: int = 0) -> EvalSummary:
        try:
            result, plant = self.episode(decode_genome(bits), episode)
        except (ResetFailure, IntegrationError) as exc:
            raise type(exc)(f"episode {episode}: {exc}") from exc
        return EvalSummary(result.fitness, result.switch_time, plant.max_abs_p,
                           plant.max_abs_theta, plant.contacts, plant.t)

    def evaluate_batch(self, population: np.ndarray, episodes) -> list[EvalSummary]:
        episodes = list(episodes)
        if self.workers <= 1:
            return [self.evaluate(b, e) for b, e in zip(population, episodes)]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(self.evaluate, population, episodes))

    def safe_baseline(self, T: float | None = None, episode: int = 0) -> EpisodeResult:
        result, _ = self.episode(None, episode, T, recover=False)
        return result


def vertex_recovery(params: PlantParams, gain: SafeGain, limits: HypercubeLimits,
                    sim: SimConfig = SimConfig(), s0=(0.0, 0.0, 0.0, 0.0), budget: float = 5.0,
                    tol: ResetTolerance = ResetTolerance()) -> list[dict]:
    """Try a SAFE reset from each of the 16 hypercube vertices."""
    out = []
    for vertex in limits.vertices(s0):
        plant = Plant(params, sim, vertex.copy())
        try:
            elapsed = reset_phase(plant, gain, s0, budget, tol)
            ok = plant.contacts == 0
        except ResetFailure:
            elapsed, ok = math.inf, False
        out.append({
            "vertex": State.from_array(vertex), "recovered": ok, "time_s": elapsed,
            "max_abs_p": plant.max_abs_p, "max_abs_theta": plant.max_abs_theta,
            "contacts": plant.contacts,
        })
    return out
