"""Monotone parametrized stop/continue policies.

Four families: three linear-in-eigenvalue rules that differ in how they
aggregate the non-priority targets (max, min, sum) and one quadratic
form in the covariances with unit-norm direction vectors. Nonnegative
(respectively unit-norm) parameter vectors are necessary and sufficient
for the decision to be monotone in the covariances: raising the priority
target's posterior or another target's prior can only move the decision
from stop toward continue, and raising another target's posterior or the
priority target's prior can only move it from continue toward stop.

The eigen families are optimized through the elementwise square
reparametrization, the quadratic family through spherical coordinates,
so the search space is unconstrained in both cases.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .errors import ContractError
from .filter_core import eigenvalues_sorted, symmetrize
from .observability import Belief
from .sampling import random_pd, random_psd
from .streams import stream


class Action(IntEnum):
    STOP = 1
    CONTINUE = 2


class PolicyFamily(Enum):
    EIGEN_MAX = "eigen-max"
    EIGEN_MIN = "eigen-min"
    EIGEN_SUM = "eigen-sum"
    QUADFORM = "quadform"


_EIGEN_FAMILIES = (PolicyFamily.EIGEN_MAX, PolicyFamily.EIGEN_MIN,
                   PolicyFamily.EIGEN_SUM)


def reparam_positive(phi: np.ndarray) -> np.ndarray:
    """Elementwise square: unconstrained phi to nonnegative weights."""
    phi = np.asarray(phi, dtype=float)
    return phi * phi


def reparam_spherical(phi: np.ndarray) -> np.ndarray:
    """Map m-1 unconstrained angles to a unit vector in R^m.

    theta(1) = cos phi(1), interior components carry a running product
    of sines, and theta(m) closes the product, so the Euclidean norm is
    exactly one ('m' here is len(phi) + 1).
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    m = phi.shape[0] + 1
    theta = np.empty(m)
    sin_prod = 1.0
    for i in range(m - 1):
        theta[i] = sin_prod * np.cos(phi[i])
        sin_prod *= np.sin(phi[i])
    theta[m - 1] = sin_prod
    return theta


@dataclass(frozen=True)
class PolicyParams:
    """Weight vectors for one policy family.

    ``theta`` weighs posteriors, ``theta_bar`` priors; one row per
    target. ``phi`` optionally records the unconstrained vector the
    weights came from.
    """

    family: PolicyFamily
    theta: np.ndarray
    theta_bar: np.ndarray
    phi: np.ndarray | None = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        theta_bar = np.asarray(self.theta_bar, dtype=float)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "theta_bar", theta_bar)
        if theta.ndim != 2 or theta.shape != theta_bar.shape:
            raise ContractError("theta and theta_bar must be (L, m) arrays")
        if self.family in _EIGEN_FAMILIES:
            if np.any(theta < 0.0) or np.any(theta_bar < 0.0):
                raise ContractError("eigen-family weights must be nonnegative")
        else:
            norms = np.concatenate([np.linalg.norm(theta, axis=1),
                                    np.linalg.norm(theta_bar, axis=1)])
            if np.any(np.abs(norms - 1.0) > 1e-12):
                raise ContractError("quadform weights must have unit norm")

    @property
    def n_targets(self) -> int:
        return self.theta.shape[0]


def _eigen_statistic(belief: Belief, params: PolicyParams) -> float:
    lam_post = [eigenvalues_sorted(p) for p in belief.posteriors]
    lam_prior = [eigenvalues_sorted(p) for p in belief.priors]
    a = belief.a
    lhs = -params.theta[a] @ lam_post[a] + params.theta_bar[a] @ lam_prior[a]
    terms = [params.theta[l] @ lam_post[l] - params.theta_bar[l] @ lam_prior[l]
             for l in range(belief.n_targets) if l != a]
    if params.family is PolicyFamily.EIGEN_MAX:
        return float(lhs + max(terms))
    if params.family is PolicyFamily.EIGEN_MIN:
        return float(lhs + min(terms))
    return float(lhs + sum(terms))


def _quadform_statistic(belief: Belief, params: PolicyParams) -> float:
    a = belief.a
    lhs = (-params.theta[a] @ belief.posteriors[a] @ params.theta[a]
           + params.theta_bar[a] @ belief.priors[a] @ params.theta_bar[a])
    for l in range(belief.n_targets):
        if l == a:
            continue
        lhs += params.theta[l] @ belief.posteriors[l] @ params.theta[l]
        lhs -= params.theta_bar[l] @ belief.priors[l] @ params.theta_bar[l]
    return float(lhs)


def decision_statistic(belief: Belief, params: PolicyParams) -> float:
    """Left-hand side of the stop test; stop fires at values >= 1."""
    if params.family is PolicyFamily.QUADFORM:
        return _quadform_statistic(belief, params)
    return _eigen_statistic(belief, params)


def decide_eigen(belief: Belief, params: PolicyParams) -> Action:
    """Stop test for the three eigenvalue families."""
    if params.family not in _EIGEN_FAMILIES:
        raise ContractError("decide_eigen requires an eigen family")
    return (Action.STOP if _eigen_statistic(belief, params) >= 1.0
            else Action.CONTINUE)


def decide_quadform(belief: Belief, params: PolicyParams) -> Action:
    """Stop test for the quadratic-form family."""
    if params.family is not PolicyFamily.QUADFORM:
        raise ContractError("decide_quadform requires the quadform family")
    return (Action.STOP if _quadform_statistic(belief, params) >= 1.0
            else Action.CONTINUE)


def decide(belief: Belief, params: PolicyParams) -> Action:
    return Action.STOP if decision_statistic(belief, params) >= 1.0 \
        else Action.CONTINUE


@dataclass(frozen=True)
class ParamLayout:
    """How a flat unconstrained vector maps onto PolicyParams.

    ``share_other`` ties all non-priority targets to one weight block
    (their models are identical in the persistent-surveillance setup);
    ``tie_priors`` reuses the posterior weights for the priors. Blocks
    are ordered theta first, then theta_bar, priority target first.
    """

    family: PolicyFamily
    n_targets: int
    state_dim: int
    share_other: bool = False
    tie_priors: bool = False
    a: int = 0

    @property
    def block_size(self) -> int:
        if self.family is PolicyFamily.QUADFORM:
            return max(self.state_dim - 1, 0)
        return self.state_dim

    @property
    def n_theta_blocks(self) -> int:
        return 2 if self.share_other else self.n_targets

    @property
    def n_params(self) -> int:
        blocks = self.n_theta_blocks * (1 if self.tie_priors else 2)
        return blocks * self.block_size

    def _expand(self, blocks: np.ndarray) -> np.ndarray:
        """(n_theta_blocks, m) weight rows to (L, m)."""
        if not self.share_other:
            return blocks
        rows = np.empty((self.n_targets, blocks.shape[1]))
        rows[self.a] = blocks[0]
        for l in range(self.n_targets):
            if l != self.a:
                rows[l] = blocks[1]
        return rows

    def build(self, phi: np.ndarray) -> PolicyParams:
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.n_params,):
            raise ContractError(f"expected {self.n_params} parameters, "
                                f"got {phi.shape}")
        reparam = (reparam_spherical if self.family is PolicyFamily.QUADFORM
                   else reparam_positive)
        width = self.block_size
        blocks = phi.reshape(-1, width) if width else np.zeros((0, 0))
        if self.family is PolicyFamily.QUADFORM and width == 0:
            # One-dimensional states: every unit vector is +-1.
            n_rows = self.n_theta_blocks * (1 if self.tie_priors else 2)
            rows = np.ones((n_rows, 1))
        else:
            rows = np.array([reparam(b) for b in blocks])
        n = self.n_theta_blocks
        theta = self._expand(rows[:n])
        theta_bar = theta if self.tie_priors else self._expand(rows[n:])
        return PolicyParams(self.family, theta, theta_bar, phi=phi)

    def random_init(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=self.n_params)


# Allowed decision movement when one covariance slot increases: raising
# the priority target's posterior or a rival's prior may only move the
# decision toward continue; the reverse slots only toward stop.
_TOWARD_CONTINUE = "toward-continue"
_TOWARD_STOP = "toward-stop"


def _slot_direction(slot: str, target: int, a: int) -> str:
    if slot == "posterior":
        return _TOWARD_CONTINUE if target == a else _TOWARD_STOP
    return _TOWARD_STOP if target == a else _TOWARD_CONTINUE


@dataclass(frozen=True)
class MonotoneSamplerConfig:
    """Belief sampler settings for the monotonicity checker."""

    n_targets: int = 2
    state_dim: int = 4
    scale: float = 1.0
    a: int = 0


@dataclass(frozen=True)
class MonotoneViolation:
    sample_index: int
    slot: str
    target: int
    before: Action
    after: Action


@dataclass
class MonotoneReport:
    n_pairs: int
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_monotone(params: PolicyParams, config: MonotoneSamplerConfig,
                    n_samples: int, seed: int = 0) -> MonotoneReport:
    """Sampled check of the monotone decision structure.

    Each sample draws a random belief, perturbs one covariance slot
    upward in the Loewner order (adding A A') and flags decision flips
    that the monotone structure forbids. Valid parameter vectors produce
    an empty report.
    """
    if config.n_targets != params.n_targets:
        raise ContractError("sampler and params disagree on target count")
    rng = stream(seed, "policy.verify_monotone")
    m = config.state_dim
    report = MonotoneReport(n_pairs=n_samples)
    slots = [("posterior", l) for l in range(config.n_targets)]
    slots += [("prior", l) for l in range(config.n_targets)]
    for i in range(n_samples):
        base_scale = config.scale * rng.uniform(0.3, 3.0)
        posts = tuple(random_pd(rng, m, base_scale * rng.uniform(0.5, 2.0))
                      for _ in range(config.n_targets))
        priors = tuple(random_pd(rng, m, base_scale * rng.uniform(0.5, 2.0))
                       for _ in range(config.n_targets))
        belief = Belief(posts, priors, config.a)
        slot, target = slots[rng.integers(len(slots))]
        bump = random_psd(rng, m, base_scale * rng.uniform(0.2, 4.0))
        current = (belief.posteriors if slot == "posterior"
                   else belief.priors)[target]
        bigger = belief.replace_slot(slot, target, symmetrize(current + bump))
        before = decide(belief, params)
        after = decide(bigger, params)
        if before == after:
            continue
        direction = _slot_direction(slot, target, belief.a)
        if direction == _TOWARD_CONTINUE and after is Action.STOP:
            report.violations.append(
                MonotoneViolation(i, slot, target, before, after))
        elif direction == _TOWARD_STOP and after is Action.CONTINUE:
            report.violations.append(
                MonotoneViolation(i, slot, target, before, after))
    return report
