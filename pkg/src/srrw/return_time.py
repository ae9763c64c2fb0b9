"""Single-token walk simulation: first-return-time sampling and age bookkeeping.

Return times are sampled by restarting the walk at the target node for each
sample (i.i.d. samples, simple confidence intervals); a long-trajectory mode
exists behind a flag. The empirical mean obeys Kac's identity mean = 1/pi(u),
which the tests use as an independent oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, StepCapError, TimeMonotonicityError
from .graphs import TransitionKernel

DEFAULT_STEP_CAP = 10**9
_BATCH = 1 << 18


@dataclass
class ReturnTimeSample:
    """First-return times of a walk to ``node``; every sample is >= 1."""

    node: int
    samples: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int64)
        if self.samples.size and self.samples.min() < 1:
            raise ValueError("return times are at least 1")

    @property
    def count(self) -> int:
        return int(self.samples.size)

    def mean(self) -> float:
        return float(self.samples.mean())

    def std_error(self) -> float:
        return float(self.samples.std(ddof=1) / np.sqrt(self.count))


def _step_batch(cum: np.ndarray, pos: np.ndarray, rng) -> np.ndarray:
    """Advance every walker one step using row-wise inverse-CDF sampling."""
    r = rng.random(pos.size)
    return (cum[pos] < r[:, None]).sum(axis=1)


def sample_return_times(kernel: TransitionKernel, u: int, n_samples: int, rng_seed: int,
                        max_steps: int = DEFAULT_STEP_CAP, mode: str = "restart") -> ReturnTimeSample:
    """Sample first-return times to ``u`` for the given lazy kernel.

    ``mode="restart"`` (default) restarts the walk at ``u`` for each sample;
    ``mode="trajectory"`` carves consecutive return gaps out of one long walk.
    Deterministic given the seed.
    """
    if n_samples < 1:
        raise InsufficientDataError("need at least one sample")
    if mode not in ("restart", "trajectory"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(rng_seed)
    cum = kernel.cumulative_rows()
    if mode == "trajectory":
        out = np.empty(n_samples, dtype=np.int64)
        pos, last, t = u, 0, 0
        for i in range(n_samples):
            while True:
                t += 1
                if t - last > max_steps:
                    raise StepCapError(f"no return to {u} within {max_steps} steps")
                r = rng.random()
                pos = int((cum[pos] < r).sum())
                if pos == u:
                    out[i] = t - last
                    last = t
                    break
        return ReturnTimeSample(u, out, seed=rng_seed)

    out = np.empty(n_samples, dtype=np.int64)
    filled = 0
    while filled < n_samples:
        m = min(_BATCH, n_samples - filled)
        pos = np.full(m, u, dtype=np.int64)
        times = np.zeros(m, dtype=np.int64)
        active = np.arange(m)
        step = 0
        while active.size:
            step += 1
            if step > max_steps:
                raise StepCapError(f"no return to {u} within {max_steps} steps")
            nxt = _step_batch(cum, pos[active], rng)
            pos[active] = nxt
            hit = nxt == u
            times[active[hit]] = step
            active = active[~hit]
        out[filled:filled + m] = times
        filled += m
    return ReturnTimeSample(u, out, seed=rng_seed)


def empirical_tail(sample: ReturnTimeSample, ages) -> list[tuple[int, float]]:
    """Empirical tail probabilities Pr{return time >= A} for each requested age."""
    ages = list(ages)
    if sample.count == 0:
        raise InsufficientDataError(f"no samples for node {sample.node}")
    if any(a < 1 for a in ages) or any(b < a for a, b in zip(ages, ages[1:])):
        raise ValueError("ages must be sorted ascending and at least 1")
    sorted_samples = np.sort(sample.samples)
    n = sample.count
    out = []
    for a in ages:
        ge = n - int(np.searchsorted(sorted_samples, a, side="left"))
        out.append((int(a), ge / n))
    return out


def tail_curve(sample: ReturnTimeSample) -> tuple[np.ndarray, np.ndarray]:
    """Tail at every observed age 1..max(sample); tail(1) = 1 by construction."""
    max_a = int(sample.samples.max())
    ages = np.arange(1, max_a + 1)
    sorted_samples = np.sort(sample.samples)
    tails = (sample.count - np.searchsorted(sorted_samples, ages, side="left")) / sample.count
    return ages, tails


def tails_to_csv(samples: list[ReturnTimeSample], path, z: float = 1.96) -> None:
    """Write tail estimates as CSV columns (node, A, tail, ci_low, ci_high).

    The interval is the normal-approximation binomial CI, clipped to [0, 1].
    """
    lines = ["node,A,tail,ci_low,ci_high"]
    for s in samples:
        ages, tails = tail_curve(s)
        se = np.sqrt(tails * (1.0 - tails) / s.count)
        lo = np.clip(tails - z * se, 0.0, 1.0)
        hi = np.clip(tails + z * se, 0.0, 1.0)
        for a, t, l, h in zip(ages, tails, lo, hi):
            lines.append(f"{s.node},{a},{float(t)!r},{float(l)!r},{float(h)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class AgeClock:
    """Tracks, per node, the last time any token visited it.

    Last-visit times start at 0, so a never-visited node has age equal to the
    current time. This convention makes early policy triggers possible and is
    recorded in experiment configs.
    """

    node_count: int
    now: int = 0
    last_visit: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.last_visit is None:
            self.last_visit = np.zeros(self.node_count, dtype=np.int64)

    def age_of(self, u: int, t: int | None = None) -> int:
        t = self.now if t is None else t
        return int(t - self.last_visit[u])


def update_age(clock: AgeClock, u: int, t: int) -> int:
    """Return the pre-visit age of ``u`` at time ``t``, then mark the visit."""
    if t < clock.now:
        raise TimeMonotonicityError(f"time went backwards: {t} < {clock.now}")
    age = int(t - clock.last_visit[u])
    clock.last_visit[u] = t
    clock.now = t
    return age
