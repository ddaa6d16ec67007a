"""Patient-allocation rules for multi-armed trials with normal outcomes.

Each rule reduces to one of three shapes:

* deterministic index rules (UCB, KLU, CB, GI) and semi-randomised index
  rules (RBI, RGI) produce a per-arm score vector whose argmax is selected,
  ties broken uniformly at random;
* randomised rules (FR, TS, TP and their batched variants TSB, TPB) produce
  a per-arm probability vector that the next arm is sampled from;
* control-guarded rules (CG, CUC) first flip a coin for the control arm and
  otherwise fall back to an inner index rule's argmax over all arms.

All rules assume every arm has at least one observation; the trial engine
guarantees that by allocating the first K+1 patients one per arm.

Allocation-time count convention: the dynamic-index lookup (GI, RGI, CG)
and the exploration bump of the semi-randomised rules (RBI, RGI) use the
serial number of the arm's *next* observation, n+1 -- the convention of the
designs whose operating characteristics this library reproduces -- while
the UCB/KLU confidence widths and the posterior draws of TS use the current
count n.

Scoring is pure given (state, rng); nothing here holds shared mutable
state, so policies are safe to evaluate concurrently across replicates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gittins import GittinsTable

__all__ = [
    "POLICY_KINDS",
    "ArmState",
    "PolicySpec",
    "PolicyVector",
    "policy_scores",
    "allocation_index",
    "ucb_score",
    "klu_score",
    "ts_probabilities",
    "tp_probabilities",
    "perturbed_score",
    "guarded_allocate",
    "BatchedPolicy",
    "select_from_scores",
    "sample_from_probabilities",
]

POLICY_KINDS = ("FR", "TS", "TSB", "RBI", "RGI", "UCB", "KLU", "CB", "GI",
                "CG", "CUC", "TP", "TPB")
_RANDOMIZED = frozenset({"FR", "TS", "TSB", "TP", "TPB"})
_BATCH_INNER = {"TSB": "TS", "TPB": "TP"}
_GUARD_INNER = {"CG": "GI", "CUC": "UCB"}
_NEEDS_TABLE = frozenset({"GI", "RGI", "CG"})
_ROUND_ROBIN_INIT = frozenset({"UCB", "KLU", "CUC"})

_SQRT2 = math.sqrt(2.0)


def _norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / _SQRT2))


class ArmState:
    """Sufficient statistic (running sum, observation count) of one arm."""

    __slots__ = ("sum", "n")

    def __init__(self, total: float = 0.0, n: int = 0):
        if n < 0:
            raise ValueError("observation count cannot be negative")
        self.sum = float(total)
        self.n = int(n)

    @property
    def mean(self) -> float:
        if self.n < 1:
            raise ValueError("mean undefined before the first observation")
        return self.sum / self.n

    def add(self, outcome: float) -> None:
        self.sum += outcome
        self.n += 1

    def copy(self) -> "ArmState":
        return ArmState(self.sum, self.n)

    def __repr__(self) -> str:
        return f"ArmState(sum={self.sum!r}, n={self.n})"


@dataclass(frozen=True)
class PolicySpec:
    """Allocation rule selection plus its tuning knobs.

    ``batch`` defaults to 20 for the batched kinds (TSB, TPB) and 1
    otherwise; ``control_guard_prob=None`` resolves to 1/(K+1) at allocation
    time (pass 1/K explicitly for the stricter guard).
    """

    kind: str
    discount: float = 0.995
    batch: int | None = None
    ts_draws: int = 1000
    control_guard_prob: float | None = None

    def __post_init__(self) -> None:
        kind = self.kind.upper()
        if kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        object.__setattr__(self, "kind", kind)
        if self.batch is None:
            object.__setattr__(self, "batch", 20 if kind in _BATCH_INNER else 1)
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.ts_draws < 1:
            raise ValueError("ts_draws must be >= 1")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.control_guard_prob is not None and not 0.0 < self.control_guard_prob < 1.0:
            raise ValueError("control_guard_prob must lie in (0, 1)")

    @property
    def is_randomized(self) -> bool:
        return self.kind in _RANDOMIZED

    @property
    def is_batched(self) -> bool:
        return self.kind in _BATCH_INNER

    @property
    def is_guarded(self) -> bool:
        return self.kind in _GUARD_INNER

    @property
    def inner_kind(self) -> str:
        return _BATCH_INNER.get(self.kind) or _GUARD_INNER.get(self.kind) or self.kind

    @property
    def needs_table(self) -> bool:
        return self.kind in _NEEDS_TABLE

    @property
    def round_robin_init(self) -> bool:
        return self.kind in _ROUND_ROBIN_INIT

    def guard_prob(self, n_experimental: int) -> float:
        if self.control_guard_prob is not None:
            return self.control_guard_prob
        return 1.0 / (n_experimental + 1)


@dataclass(frozen=True)
class PolicyVector:
    """Per-arm output of a rule: either raw scores or allocation probabilities."""

    kind: str  # "score" | "probability"
    values: np.ndarray


def ucb_score(arm: ArmState, sigma: float, t: int) -> float:
    """Upper-confidence index ``mean + sigma * sqrt(2 ln t / n)``."""
    if arm.n < 1:
        raise ValueError("UCB score requires at least one observation")
    if t < 2:
        raise ValueError("UCB score requires patient index t >= 2")
    return arm.mean + sigma * math.sqrt(2.0 * math.log(t) / arm.n)


def klu_score(arm: ArmState, sigma: float, t: int) -> float:
    """Index ``mean + sigma * sqrt(2 (ln t + 3 ln ln t) / n)``.

    The radicand is floored at zero so the score stays defined for every
    integer t >= 3.
    """
    if arm.n < 1:
        raise ValueError("KLU score requires at least one observation")
    if t < 3:
        raise ValueError("KLU score requires patient index t >= 3")
    log_t = math.log(t)
    radicand = 2.0 * (log_t + 3.0 * math.log(log_t)) / arm.n
    return arm.mean + sigma * math.sqrt(max(radicand, 0.0))


def ts_probabilities(arms, sigma: float, t: int, T: int, draws: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Tempered posterior probability-of-best allocation weights.

    Each arm's chance of being best is estimated from ``draws`` joint
    posterior samples (mu_k ~ N(mean_k, sigma^2/n_k)) and raised to the
    stabilising exponent c = t/(2T); weights are then normalized.  When all
    tempered weights underflow to zero, the uniform vector is returned.
    """
    k1 = len(arms)
    means = np.array([a.mean for a in arms])
    sds = sigma / np.sqrt(np.array([a.n for a in arms], dtype=float))
    noise = rng.standard_normal((draws, k1), dtype=np.float32)
    winners = np.argmax(means + sds * noise, axis=1)
    p_best = np.bincount(winners, minlength=k1) / draws
    c = t / (2.0 * T)
    weights = p_best ** c  # 0**0 == 1.0, so c == 0 yields the uniform vector
    total = weights.sum()
    if total <= 0.0:
        return np.full(k1, 1.0 / k1)
    return weights / total


def tp_probabilities(arms, sigma: float, t: int, T: int) -> np.ndarray:
    """Control-balancing randomised weights for multi-arm trials.

    Experimental arm k gets weight proportional to
    P[mu_k > mu_0 | data]^gamma with gamma = 3 (t/T)^1.75, normalized over
    the experimental arms; the control weight is
    (1/K) exp[(max_k (n_k - n_0))^eta] with eta = 0.25 (t/T), the base
    floored at zero and 0^0 taken as 0 so the t = 0 vector is uniform.
    """
    K = len(arms) - 1
    if K < 2:
        raise ValueError("this rule is defined for multi-arm trials only (K >= 2)")
    frac = t / T
    gamma = 3.0 * frac ** 1.75
    eta = 0.25 * frac
    control = arms[0]
    p_beats_control = [
        _norm_cdf((arm.mean - control.mean)
                  / (sigma * math.sqrt(1.0 / arm.n + 1.0 / control.n)))
        for arm in arms[1:]
    ]
    tempered = np.array(p_beats_control) ** gamma
    total = tempered.sum()
    experimental = tempered / total if total > 0.0 else np.full(K, 1.0 / K)

    count_edge = max(arm.n for arm in arms[1:]) - control.n
    base = float(max(count_edge, 0))
    exponent = 0.0 if (base == 0.0 and eta == 0.0) else base ** eta
    control_weight = math.exp(exponent) / K

    probs = np.empty(K + 1)
    probs[0] = control_weight
    probs[1:] = experimental
    return probs / probs.sum()


def perturbed_score(base: float, n: int, K: int, rng: np.random.Generator) -> float:
    """Semi-randomised index: ``base`` plus an exponential exploration bump.

    The bump is ((K+1)/n) * Y with Y exponential of mean 1/(K+1), one fresh
    draw per arm per decision, so its expectation is 1/n.
    """
    if n < 1:
        raise ValueError("perturbed score requires at least one observation")
    y = rng.standard_exponential() / (K + 1.0)
    return base + (K + 1.0) / n * y


def allocation_index(arm: ArmState, sigma: float, table: GittinsTable) -> float:
    """Dynamic allocation score of an arm with ``n`` observations.

    Looks up the standardized table at entry n+1, the serial number of the
    arm's next observation; trial designs calibrated against the classic
    printed index tables use this convention.
    """
    return arm.mean + sigma * table.value(arm.n + 1)


def _score_vector(kind: str, arms, sigma: float, t: int,
                  table: GittinsTable | None, rng: np.random.Generator) -> np.ndarray:
    K = len(arms) - 1
    if kind == "CB":
        return np.array([a.mean for a in arms])
    if kind == "GI":
        return np.array([allocation_index(a, sigma, table) for a in arms])
    if kind == "UCB":
        return np.array([ucb_score(a, sigma, t) for a in arms])
    if kind == "KLU":
        return np.array([klu_score(a, sigma, t) for a in arms])
    if kind == "RBI":
        return np.array([perturbed_score(a.mean, a.n + 1, K, rng) for a in arms])
    if kind == "RGI":
        return np.array([perturbed_score(allocation_index(a, sigma, table), a.n + 1, K, rng)
                         for a in arms])
    raise ValueError(f"{kind} does not produce a plain score vector")


def policy_scores(spec: PolicySpec, arms, sigma: float, t: int, T: int,
                  table: GittinsTable | None = None,
                  rng: np.random.Generator | None = None) -> PolicyVector:
    """Evaluate one allocation rule at the current trial state.

    ``t`` is the 1-based index of the patient being allocated; the tempering
    exponents of TS and TP use the t-1 patients already allocated, while the
    UCB/KLU logarithms use t itself.  Returns a probability vector for
    randomised rules and a score vector for index rules.  Guarded rules (CG,
    CUC) are two-stage selections, not vectors; allocate them with
    :func:`guarded_allocate`.
    """
    if any(a.n < 1 for a in arms):
        raise ValueError("every arm needs an observation before scoring; "
                         "the initialization phase was skipped")
    kind = spec.kind
    k1 = len(arms)
    if kind == "FR":
        return PolicyVector("probability", np.full(k1, 1.0 / k1))
    if kind in ("TS", "TSB"):
        return PolicyVector("probability",
                            ts_probabilities(arms, sigma, t - 1, T, spec.ts_draws, rng))
    if kind in ("TP", "TPB"):
        return PolicyVector("probability", tp_probabilities(arms, sigma, t - 1, T))
    if kind in ("CG", "CUC"):
        raise ValueError(f"{kind} allocates via guarded_allocate, not a score vector")
    return PolicyVector("score", _score_vector(kind, arms, sigma, t, table, rng))


def select_from_scores(scores, rng: np.random.Generator) -> int:
    """Argmax with uniform tie-breaking.

    Exactly one uniform draw is consumed per call, tie or not, so selection
    streams stay aligned between runs whose scores differ by a constant.
    """
    u = rng.random()
    best = max(scores)
    ties = [i for i, s in enumerate(scores) if s == best]
    if len(ties) == 1:
        return ties[0]
    return ties[int(u * len(ties))]


def sample_from_probabilities(probs, rng: np.random.Generator) -> int:
    """Draw one arm index from a probability vector using one uniform."""
    u = rng.random()
    acc = 0.0
    last = len(probs) - 1
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return last


def guarded_allocate(spec: PolicySpec, arms, sigma: float, t: int,
                     table: GittinsTable | None,
                     rng: np.random.Generator) -> int:
    """Two-stage control-guarded selection (CG, CUC).

    With probability ``guard_prob`` the control arm is chosen outright;
    otherwise the inner index rule's argmax over all arms wins, so the
    control can also be chosen on merit (its long-run share therefore
    exceeds the guard probability).
    """
    K = len(arms) - 1
    guard = spec.guard_prob(K)
    if rng.random() < guard:
        return 0
    inner = spec.inner_kind
    scores = _score_vector(inner, arms, sigma, t, table, rng)
    return select_from_scores(scores, rng)


class BatchedPolicy:
    """Blocked view of a randomised rule: probabilities refresh every ``b`` patients.

    The vector starts uniform, is recomputed from the current arm states at
    patient indices t with (t-1) % b == 0 (t > 1), and is reused in between;
    outcomes keep accruing to the arm states but stay invisible to the rule
    until the next refresh.  Trailing patients after the last full block use
    the final refreshed vector.
    """

    def __init__(self, spec: PolicySpec, n_arms: int):
        if not spec.is_batched and spec.batch != 1:
            raise ValueError("batched allocation expects a TSB/TPB spec or batch=1")
        self.spec = spec
        self.batch = spec.batch
        self._probs = np.full(n_arms, 1.0 / n_arms)
        self.refresh_count = 0
        self.refresh_indices: list[int] = []

    def probabilities(self, arms, sigma: float, t: int, T: int,
                      rng: np.random.Generator) -> np.ndarray:
        if t > 1 and (t - 1) % self.batch == 0:
            inner = self.spec.inner_kind
            if inner == "TS":
                self._probs = ts_probabilities(arms, sigma, t - 1, T,
                                               self.spec.ts_draws, rng)
            elif inner == "TP":
                self._probs = tp_probabilities(arms, sigma, t - 1, T)
            else:
                raise ValueError(f"no batched variant defined for {inner}")
            self.refresh_count += 1
            self.refresh_indices.append(t)
        return self._probs
