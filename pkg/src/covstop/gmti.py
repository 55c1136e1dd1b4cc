"""GMTI kinematics, scenario builders and the macro/micro loop.

The radar platform observes ground targets in range, azimuth and range
rate. On the decision-epoch time scale the targets follow a
constant-velocity model and the measurement map is linearized about
each target's initial estimate, which is accurate for the operating
geometries validated by the linearization module. The decision problem
itself consumes only covariances: simulated truth and measurement
values influence outcomes solely through the miss/detect pattern.

Two stock scenarios are provided, a constant-velocity fly-by and a
72-segment orbital persistent-surveillance run driven by a one-hot
priority macro-manager.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ContractError
from .filter_core import TargetModel, check_covariance
from .observability import Belief, CostWeights, StoppingCase
from .optimizer import PolicyLike, rollout
from .policy import Action
from .streams import child_seed, stream


@dataclass(frozen=True)
class PlatformState:
    """Radar platform kinematics: planar state plus constant altitude."""

    xi: np.ndarray  # [x, x_dot, y, y_dot] in m, m/s
    altitude: float  # m, constant; may be 0 only in test fixtures

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        object.__setattr__(self, "xi", xi)
        if xi.shape != (4,) or not np.all(np.isfinite(xi)):
            raise ContractError("platform state must be a finite 4-vector")
        if self.altitude < 0.0:
            raise ContractError("altitude cannot be negative")

    def at_epoch(self, k: int, period: float) -> "PlatformState":
        """Constant-velocity propagation by k epochs of length period."""
        x, vx, y, vy = self.xi
        t = k * period
        return PlatformState(np.array([x + vx * t, vx, y + vy * t, vy]),
                             self.altitude)


@dataclass(frozen=True)
class OrbitSpec:
    """Circular platform track sampled at evenly spaced locations."""

    radius: float
    speed: float
    altitude: float
    n_locations: int = 72
    start_location: int = 1

    def __post_init__(self):
        if self.radius <= 0.0 or self.speed <= 0.0 or self.altitude <= 0.0:
            raise ContractError("orbit radius, speed and altitude must be "
                                "positive")
        if not 1 <= self.start_location <= self.n_locations:
            raise ContractError("start location out of range")


def platform_orbit_state(n: int, r_tilde: float, v_tilde: float,
                         altitude: float) -> PlatformState:
    """Platform state at orbit location n of 72 (5 degrees apart)."""
    if not 1 <= n <= 72:
        raise ContractError("orbit location must lie in 1..72")
    ang = math.radians(5.0 * n)
    xi = np.array([r_tilde * math.cos(ang), -v_tilde * math.sin(ang),
                   r_tilde * math.sin(ang), v_tilde * math.cos(ang)])
    return PlatformState(xi, altitude)


def system_matrices(period: float, sigma_x: float, sigma_y: float,
                    sigma_r: float, sigma_a: float, sigma_rdot: float
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Constant-velocity system matrices for one target.

    ``sigma_a`` is the azimuth noise standard deviation in radians (the
    measurement map returns radians); callers quoting degrees convert
    first. Returns (F, G, Q, r_base).
    """
    if period < 0.0:
        raise ContractError("sampling period cannot be negative")
    t = period
    f = np.array([[1.0, t, 0.0, 0.0],
                  [0.0, 1.0, 0.0, 0.0],
                  [0.0, 0.0, 1.0, t],
                  [0.0, 0.0, 0.0, 1.0]])
    g = np.array([[t**2 / 2.0, 0.0],
                  [t, 0.0],
                  [0.0, t**2 / 2.0],
                  [0.0, t]])
    q = np.array([
        [t**4 / 4.0 * sigma_x**2, t**3 / 2.0 * sigma_x**2, 0.0, 0.0],
        [t**3 / 2.0 * sigma_x**2, t**2 * sigma_x**2, 0.0, 0.0],
        [0.0, 0.0, t**4 / 4.0 * sigma_y**2, t**3 / 2.0 * sigma_y**2],
        [0.0, 0.0, t**3 / 2.0 * sigma_y**2, t**2 * sigma_y**2],
    ])
    r_base = np.diag([sigma_r**2, sigma_a**2, sigma_rdot**2])
    return f, g, q, r_base


def nonlinear_h(s: np.ndarray, platform: PlatformState) -> np.ndarray:
    """Range (m), azimuth (rad, atan2) and range rate (m/s)."""
    dx = s[0] - platform.xi[0]
    dy = s[2] - platform.xi[2]
    dvx = s[1] - platform.xi[1]
    dvy = s[3] - platform.xi[3]
    rng = math.sqrt(dx * dx + dy * dy + platform.altitude**2)
    if rng == 0.0:
        raise ContractError("target coincides with the platform")
    return np.array([rng, math.atan2(dy, dx), (dx * dvx + dy * dvy) / rng])


def propagate_truth(s: np.ndarray, model: TargetModel, sigma_p: float,
                    rng: np.random.Generator) -> np.ndarray:
    """One truth step F s + G w with acceleration noise std sigma_p."""
    w = rng.normal(0.0, sigma_p, size=model.G.shape[1])
    return model.F @ s + model.G @ w


def measure(s: np.ndarray, platform: PlatformState, model: TargetModel,
            priority: float, rng: np.random.Generator) -> np.ndarray | None:
    """Noisy observation of one target, or None on a missed detection.

    The detection draw is consumed before any noise draw so miss
    patterns replay independently of the noise stream.
    """
    if priority <= 0.0:
        raise ContractError("a measuring target needs positive priority")
    if rng.random() >= model.p_d:
        return None
    chol = np.linalg.cholesky(model.r_base)
    noise = chol @ rng.standard_normal(model.obs_dim)
    return nonlinear_h(s, platform) + noise / math.sqrt(priority * model.delta)


class MacroMode(Enum):
    FLYBY_FIXED = "flyby-fixed"
    PERSISTENT = "persistent"


def macro_select_priority(posteriors: Sequence[np.ndarray], mode: MacroMode,
                          fixed_nu: np.ndarray | None = None
                          ) -> tuple[int, np.ndarray]:
    """Priority vector for the next scheduling interval.

    Persistent mode points all resources at the target with largest
    posterior log-determinant; fly-by mode returns the configured
    vector, whose argmax names the priority target.
    """
    if len(posteriors) < 2:
        raise ContractError("need at least two targets")
    if mode is MacroMode.PERSISTENT:
        logdets = [np.linalg.slogdet(p)[1] for p in posteriors]
        a = int(np.argmax(logdets))
        nu = np.zeros(len(posteriors))
        nu[a] = 1.0
        return a, nu
    if fixed_nu is None:
        raise ContractError("fly-by mode needs the configured priorities")
    nu = np.asarray(fixed_nu, dtype=float)
    return int(np.argmax(nu)), nu


def initial_mse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Mean squared component error of an initial state estimate."""
    d = np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.mean(d * d))


@dataclass(frozen=True)
class Scenario:
    """Everything a stopping-problem run needs, immutable once built."""

    name: str
    models: tuple
    priorities: np.ndarray
    weights: CostWeights
    tau_max: int
    initial_posteriors: tuple
    initial_priors: tuple
    seed: int = 0
    sigma_p: float = 0.0
    macro_mode: MacroMode = MacroMode.FLYBY_FIXED
    true_states: tuple | None = None
    estimates: tuple | None = None
    platform: PlatformState | None = None
    orbit: OrbitSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "priorities",
                           np.asarray(self.priorities, dtype=float))
        object.__setattr__(self, "initial_posteriors",
                           tuple(self.initial_posteriors))
        object.__setattr__(self, "initial_priors", tuple(self.initial_priors))
        n = len(self.models)
        if n < 2:
            raise ContractError("a scenario needs at least two targets")
        if self.priorities.shape != (n,):
            raise ContractError("priorities must have one entry per target")
        if np.any(self.priorities < 0.0):
            raise ContractError("priorities cannot be negative")
        if abs(float(np.sum(self.priorities)) - 1.0) > 1e-9:
            raise ContractError("priorities must sum to 1")
        if self.weights.n_targets != n:
            raise ContractError("cost weights must cover every target")
        if self.tau_max < 1:
            raise ContractError("tau_max must be at least 1")
        if len(self.initial_posteriors) != n or len(self.initial_priors) != n:
            raise ContractError("initial covariances must cover every target")
        for l in range(n):
            check_covariance(self.initial_posteriors[l], f"P0[{l}]")
            check_covariance(self.initial_priors[l], f"Pbar0[{l}]")

    @property
    def n_targets(self) -> int:
        return len(self.models)

    @property
    def a(self) -> int:
        return int(np.argmax(self.priorities))

    def initial_belief(self) -> Belief:
        return Belief(self.initial_posteriors, self.initial_priors, self.a)

    def with_overrides(self, operating_cost: float | None = None,
                       p_d: float | None = None,
                       tau_max: int | None = None) -> "Scenario":
        """Copy with CLI-style overrides applied."""
        scenario = self
        if operating_cost is not None:
            weights = CostWeights(scenario.weights.alpha, scenario.weights.beta,
                                  operating_cost, scenario.weights.case)
            scenario = replace(scenario, weights=weights)
        if p_d is not None:
            models = tuple(replace(m, p_d=p_d) for m in scenario.models)
            scenario = replace(scenario, models=models)
        if tau_max is not None:
            scenario = replace(scenario, tau_max=tau_max)
        return scenario

    def with_initial_posteriors(self, posteriors: Sequence[np.ndarray],
                                priors: Sequence[np.ndarray] | None = None
                                ) -> "Scenario":
        priors = tuple(priors) if priors is not None else tuple(posteriors)
        return replace(self, initial_posteriors=tuple(posteriors),
                       initial_priors=priors)


# Table of initial true states and tracker estimates for the four stock
# targets (positions m, velocities m/s).
STOCK_TARGETS = (
    {"estimate": [130.0, 5.5, 84.0, 8.1], "true_state": [100.0, 3.0, 40.0, 7.0]},
    {"estimate": [-47.88, -2.38, 210.41, 0.418],
     "true_state": [-20.0, -4.0, 200.0, 1.0]},
    {"estimate": [55.84, 2.37, 121.74, 9.56],
     "true_state": [50.0, 2.0, 95.0, 10.0]},
    {"estimate": [-55.13, 5.75, -68.41, -6.10],
     "true_state": [-70.0, 5.0, -50.0, -6.0]},
)

# Default initial covariance: 10 m position and 5 m/s velocity sigmas.
DEFAULT_P0_DIAG = (100.0, 25.0, 100.0, 25.0)

_FLYBY_DEPRESSION_DEG = 15.0


def flyby_platform() -> PlatformState:
    """Fly-by platform: constant velocity, altitude from a 15 degree
    depression angle at the initial ground range."""
    x, vx, y, vy = 10_000.0, 53.0, -30_000.0, 85.0
    altitude = math.hypot(x, y) * math.tan(math.radians(_FLYBY_DEPRESSION_DEG))
    return PlatformState(np.array([x, vx, y, vy]), altitude)


def _linearized_models(estimates, platform, period, sigma_x, sigma_y,
                       sigma_r, sigma_a, sigma_rdot, p_d, delta):
    from .linearization import jacobian_h  # local import breaks the cycle

    f, g, q, r_base = system_matrices(period, sigma_x, sigma_y, sigma_r,
                                      sigma_a, sigma_rdot)
    return tuple(TargetModel(F=f, G=g, H=jacobian_h(np.asarray(e), platform),
                             Q=q, r_base=r_base, p_d=p_d, delta=delta)
                 for e in estimates)


def build_flyby_scenario(seed: int = 1, tau_max: int = 60) -> Scenario:
    """Four-target fly-by with a fixed priority split.

    Detection probability 0.75, operating cost 0.8 and the sum
    aggregator with a heavy posterior weight on the priority target.
    The horizon default of 60 epochs (6 s) comfortably covers stopping
    times, which land in the 10 to 50 range here.
    """
    platform = flyby_platform()
    estimates = tuple(np.array(t["estimate"]) for t in STOCK_TARGETS)
    true_states = tuple(np.array(t["true_state"]) for t in STOCK_TARGETS)
    models = _linearized_models(
        estimates, platform, period=0.1, sigma_x=0.5, sigma_y=0.5,
        sigma_r=20.0, sigma_a=math.radians(0.5), sigma_rdot=5.0,
        p_d=0.75, delta=100.0)
    weights = CostWeights(alpha=np.full(4, 0.05),
                          beta=np.array([5.0, 0.05, 0.05, 0.05]),
                          operating_cost=0.8, case=StoppingCase.AVG_DIFF)
    p0 = tuple(np.diag(DEFAULT_P0_DIAG) for _ in range(4))
    return Scenario(
        name="flyby", models=models,
        priorities=np.array([0.6, 0.39, 0.008, 0.002]), weights=weights,
        tau_max=tau_max, initial_posteriors=p0, initial_priors=p0,
        seed=seed, sigma_p=1.5, macro_mode=MacroMode.FLYBY_FIXED,
        true_states=true_states, estimates=estimates, platform=platform)


def build_persistent_scenario(seed: int = 1, tau_max: int = 60,
                              location: int = 1) -> Scenario:
    """Four-target persistent surveillance from an orbiting platform.

    One-hot priorities (all resources on the most uncertain target),
    detection probability 0.9, and a conditional-entropy style cost with
    zero prior weight on the measurement-free targets.
    """
    orbit = OrbitSpec(radius=30_000.0, speed=250.0, altitude=5_000.0,
                      start_location=location)
    platform = platform_orbit_state(location, orbit.radius, orbit.speed,
                                    orbit.altitude)
    estimates = tuple(np.array(t["estimate"]) for t in STOCK_TARGETS)
    true_states = tuple(np.array(t["true_state"]) for t in STOCK_TARGETS)
    models = _linearized_models(
        estimates, platform, period=0.1, sigma_x=0.5, sigma_y=0.5,
        sigma_r=20.0, sigma_a=math.radians(0.5), sigma_rdot=5.0,
        p_d=0.9, delta=100.0)
    weights = CostWeights(alpha=np.array([0.25, 0.0, 0.0, 0.0]),
                          beta=np.array([0.25, 1.0, 1.0, 1.0]),
                          operating_cost=0.8, case=StoppingCase.AVG_DIFF)
    p0 = tuple(np.diag(DEFAULT_P0_DIAG) for _ in range(4))
    return Scenario(
        name="persistent", models=models,
        priorities=np.array([1.0, 0.0, 0.0, 0.0]), weights=weights,
        tau_max=tau_max, initial_posteriors=p0, initial_priors=p0,
        seed=seed, sigma_p=1.5, macro_mode=MacroMode.PERSISTENT,
        true_states=true_states, estimates=estimates, platform=platform,
        orbit=orbit)


def models_at_location(scenario: Scenario, location: int) -> tuple:
    """Re-linearize every target's observation map at an orbit location."""
    if scenario.orbit is None or scenario.estimates is None:
        return scenario.models
    from .linearization import jacobian_h

    platform = platform_orbit_state(location, scenario.orbit.radius,
                                    scenario.orbit.speed,
                                    scenario.orbit.altitude)
    return tuple(replace(m, H=jacobian_h(np.asarray(e), platform))
                 for m, e in zip(scenario.models, scenario.estimates))


@dataclass(frozen=True)
class MacroRecord:
    cycle: int
    epoch: int
    target: int
    log_det_posterior: float
    log_det_prior: float
    detected: bool
    action: int


@dataclass
class MacroTrace:
    records: list = field(default_factory=list)
    stop_times: list = field(default_factory=list)
    priority_targets: list = field(default_factory=list)


def run_macro_cycles(scenario: Scenario, policies, n_cycles: int,
                     seed: int) -> MacroTrace:
    """Alternate priority selection and micro-manager stopping runs.

    ``policies`` is a single policy or, for orbital scenarios, a mapping
    from orbit location to policy. Posteriors carry across cycles;
    priors re-anchor to the posteriors when each micro clock resets, so
    zero-priority targets track their priors exactly within a cycle.
    """
    trace = MacroTrace()
    posteriors = scenario.initial_posteriors
    location = scenario.orbit.start_location if scenario.orbit else None
    for cycle in range(n_cycles):
        a, nu = macro_select_priority(posteriors, scenario.macro_mode,
                                      scenario.priorities)
        models = (models_at_location(scenario, location)
                  if location is not None else scenario.models)
        cyc_scenario = replace(scenario, priorities=nu, models=models)
        belief = Belief(posteriors, posteriors, a)
        policy = policies[location] if isinstance(policies, dict) else policies
        result = rollout(cyc_scenario, policy,
                         child_seed(seed, "macro.cycle", cycle),
                         initial_belief=belief)
        for epoch in range(1, result.tau + 1):
            stepped = result.belief_trajectory[epoch]
            action = Action.STOP if epoch == result.tau else Action.CONTINUE
            for l in range(scenario.n_targets):
                trace.records.append(MacroRecord(
                    cycle=cycle, epoch=epoch, target=l,
                    log_det_posterior=float(
                        np.linalg.slogdet(stepped.posteriors[l])[1]),
                    log_det_prior=float(
                        np.linalg.slogdet(stepped.priors[l])[1]),
                    detected=bool(result.detections[epoch - 1, l]),
                    action=int(action)))
        trace.stop_times.append(result.tau)
        trace.priority_targets.append(a)
        posteriors = result.belief_trajectory[-1].posteriors
        if location is not None:
            location = location % scenario.orbit.n_locations + 1
    return trace
