"""Monte-Carlo checks of the uptime bounds on synthetic alternating-renewal traces.

Two claims are checked:

* uptime ``1 / (1 + lambda * mu)`` is bounded below by ``NRR = 1 - lambda * mu``,
  and simulated traces converge to that uptime;
* a recovery time ``R`` with mean ``mu`` and std ``sigma`` stays below
  ``mu + k * sigma`` with frequency at least ``alpha``, where ``k`` is the
  factor under test (by default ``metrics.k_alpha``).

Nothing here touches the reflex engine: traces come straight from the
distributions below.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from . import metrics


@dataclass(frozen=True)
class Distribution:
    """A non-negative duration law with exactly known mean and std.

    ``normal`` is truncated at zero; its reported moments are those of the
    truncated law, not the nominal parameters.
    """

    kind: str
    mean: float
    std: float
    _draw: Callable[[np.random.Generator, int], np.ndarray] = field(repr=False, compare=False)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self._draw(rng, size)

    @classmethod
    def point(cls, value: float) -> Distribution:
        if value < 0:
            raise ValueError("durations must be non-negative")
        return cls("point", float(value), 0.0, lambda rng, n: np.full(n, float(value)))

    @classmethod
    def exponential(cls, mean: float) -> Distribution:
        if mean <= 0:
            raise ValueError("exponential mean must be positive")
        return cls("exponential", mean, mean, lambda rng, n: rng.exponential(mean, n))

    @classmethod
    def normal(cls, loc: float, scale: float) -> Distribution:
        if scale <= 0:
            return cls.point(loc)
        law = stats.truncnorm((0.0 - loc) / scale, np.inf, loc=loc, scale=scale)
        return cls("normal", float(law.mean()), float(law.std()), lambda rng, n: law.rvs(size=n, random_state=rng))

    @classmethod
    def lognormal(cls, mean: float, std: float) -> Distribution:
        """Lognormal with the given mean and std (moment matched)."""
        if mean <= 0:
            raise ValueError("lognormal mean must be positive")
        if std == 0:
            return cls.point(mean)
        s2 = math.log1p((std / mean) ** 2)
        m = math.log(mean) - s2 / 2
        s = math.sqrt(s2)
        return cls("lognormal", mean, std, lambda rng, n: rng.lognormal(m, s, n))


@dataclass(frozen=True)
class RenewalTrace:
    up_durations: np.ndarray
    down_durations: np.ndarray
    horizon: float
    uptime_total: float


def simulate_renewal(
    up: Distribution, down: Distribution, horizon: float, rng: np.random.Generator
) -> RenewalTrace:
    """Alternate up/down periods from time 0 until ``horizon``; the period
    straddling the horizon is cut there."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    cycle = up.mean + down.mean
    if cycle <= 0:
        raise ValueError("up and down periods cannot both be identically zero")
    batch = max(64, int(1.1 * horizon / cycle) + 64)

    ups: list[np.ndarray] = []
    downs: list[np.ndarray] = []
    elapsed = 0.0
    while elapsed < horizon:
        u = up.sample(rng, batch)
        d = down.sample(rng, batch)
        ups.append(u)
        downs.append(d)
        elapsed += float(np.sum(u) + np.sum(d))
    u = np.concatenate(ups)
    d = np.concatenate(downs)

    # start of each period in the sequence U1, D1, U2, D2, ...
    seq = np.empty(2 * len(u))
    seq[0::2] = u
    seq[1::2] = d
    ends = np.cumsum(seq)
    last = int(np.searchsorted(ends, horizon, side="left"))  # period containing the horizon
    starts = ends - seq
    clipped = seq[: last + 1].copy()
    clipped[last] = horizon - starts[last]
    up_clipped = clipped[0::2]
    down_clipped = clipped[1::2]
    return RenewalTrace(
        up_durations=up_clipped,
        down_durations=down_clipped,
        horizon=horizon,
        uptime_total=float(math.fsum(up_clipped)),
    )


def empirical_uptime(trace: RenewalTrace) -> float:
    return trace.uptime_total / trace.horizon


# --------------------------------------------------------------------------
# Theorem 1: uptime >= NRR


@dataclass(frozen=True)
class Theorem1Row:
    lam: float
    mu: float
    a: float
    uptime: float
    nrr: float
    gap: float
    empirical: float
    rel_error: float
    analytic_ok: bool
    statistical_ok: bool

    @property
    def passed(self) -> bool:
        return self.analytic_ok and self.statistical_ok


def default_grid(n: int = 10, max_product: float = 2.0) -> list[tuple[float, float]]:
    """``n x n`` grid of (lambda, mu) with lambda * mu spanning [0, max_product]."""
    lams = np.linspace(0.05, 0.5, n)
    mus = np.linspace(0.0, max_product / lams[-1], n)
    return [(float(l), float(m)) for l in lams for m in mus]


def down_law(mu: float, cv: float = 0.35) -> Distribution:
    """Recovery-time law for the renewal check: lognormal with coefficient of
    variation ``cv``, or a point mass at zero when ``mu == 0``."""
    return Distribution.point(0.0) if mu == 0 else Distribution.lognormal(mu, cv * mu)


def check_theorem1(
    grid: Iterable[tuple[float, float]],
    rng: np.random.Generator,
    cycles: float = 1e5,
    rel_tol: float = 0.01,
    up_law: Callable[[float], Distribution] = lambda lam: Distribution.exponential(1.0 / lam),
    down: Callable[[float], Distribution] = down_law,
    _flip: bool = False,
) -> list[Theorem1Row]:
    """Compare analytic uptime, NRR and simulated uptime on every grid point.

    The horizon is ``cycles`` mean up/down cycles. ``_flip`` reverses the
    analytic inequality; it exists only as a negative control for tests.
    """
    rows = []
    for lam, mu in grid:
        if lam <= 0 or mu < 0:
            raise ValueError(f"grid point ({lam}, {mu}) outside lambda > 0, mu >= 0")
        a = lam * mu
        pi = metrics.steady_state_uptime(lam, mu)
        lower = metrics.nrr(mu, 1.0 / lam)
        gap = pi - lower
        # exact rational arithmetic on the float inputs; for tiny a the gap is
        # below one ulp and float evaluation could invert the inequality
        aq = Fraction(lam) * Fraction(mu)
        pi_q, lower_q = 1 / (1 + aq), 1 - aq
        analytic_ok = (pi_q <= lower_q) if _flip else (pi_q >= lower_q)
        analytic_ok = analytic_ok and pi_q - lower_q == aq * aq / (1 + aq)
        up, dn = up_law(lam), down(mu)
        trace = simulate_renewal(up, dn, cycles * (up.mean + dn.mean), rng)
        emp = empirical_uptime(trace)
        rel = abs(emp - pi) / pi
        rows.append(Theorem1Row(lam, mu, a, pi, lower, gap, emp, rel, analytic_ok, rel <= rel_tol))
    return rows


# --------------------------------------------------------------------------
# Theorem 2: coverage of mu + k * sigma


@dataclass(frozen=True)
class Theorem2Row:
    family: str
    alpha: float
    mu: float
    sigma: float
    lam: float
    k: float
    r_alpha: float
    coverage: float
    tolerance: float
    nrr: float
    nrr_alpha: float
    status: str  # "pass", "statistical-miss" (below alpha but inside the band) or "violation"
    analytic_ok: bool

    @property
    def passed(self) -> bool:
        return self.status != "violation" and self.analytic_ok


def binomial_tolerance(alpha: float, n: int, sigmas: float = 3.0) -> float:
    return sigmas * math.sqrt(alpha * (1 - alpha) / n)


def check_theorem2(
    down: Distribution,
    lam: float,
    alphas: Sequence[float],
    n_trials: int,
    rng: np.random.Generator,
    factor: Callable[[float], float] = metrics.k_alpha,
) -> list[Theorem2Row]:
    if down.std < 0 or lam <= 0:
        raise ValueError("need sigma >= 0 and lambda > 0")
    draws = down.sample(rng, n_trials)
    mu, sigma = down.mean, down.std
    base = metrics.nrr(mu, 1.0 / lam)
    rows = []
    for alpha in alphas:
        k = factor(alpha)
        r_alpha = mu + k * sigma
        coverage = float(np.mean(draws <= r_alpha))
        tol = binomial_tolerance(alpha, n_trials)
        if coverage >= alpha:
            status = "pass"
        elif coverage >= alpha - tol:
            status = "statistical-miss"
        else:
            status = "violation"
        bound = 1.0 - lam * r_alpha
        rows.append(
            Theorem2Row(down.kind, alpha, mu, sigma, lam, k, r_alpha, coverage, tol, base, bound, status, bound <= base)
        )
    return rows


def cantelli_factor(alpha: float) -> float:
    """Smallest ``k`` for which Cantelli's inequality guarantees
    ``P[R <= mu + k sigma] >= alpha`` for every law: ``sqrt(alpha / (1 - alpha))``."""
    if not 0.0 < alpha < 1.0:
        raise metrics.MetricDomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    return math.sqrt(alpha / (1.0 - alpha))


def theorem2_families(mu: float = 6.21, sigma: float = 2.14) -> list[Distribution]:
    return [
        Distribution.point(mu),
        Distribution.normal(mu, sigma),
        Distribution.lognormal(mu, sigma),
        Distribution.exponential(mu),
    ]


DEFAULT_ALPHAS = (0.5, 0.8, 0.9, 0.95, 0.99)


# --------------------------------------------------------------------------
# CSV output

CSV_COLUMNS = (
    "check",
    "family",
    "lambda",
    "mu",
    "sigma",
    "alpha",
    "k",
    "analytic_pi",
    "nrr",
    "nrr_alpha",
    "empirical_uptime",
    "coverage",
    "status",
    "pass",
)


def verification_csv(t1: Sequence[Theorem1Row], t2: Sequence[Theorem2Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in t1:
        status = "pass" if r.passed else ("analytic-violation" if not r.analytic_ok else "statistical-miss")
        w.writerow(
            ["theorem1", "renewal", repr(r.lam), repr(r.mu), "", "", "", repr(r.uptime), repr(r.nrr), "",
             repr(r.empirical), "", status, "pass" if r.passed else "fail"]
        )
    for r in t2:
        w.writerow(
            ["theorem2", r.family, repr(r.lam), repr(r.mu), repr(r.sigma), repr(r.alpha), repr(r.k), "",
             repr(r.nrr), repr(r.nrr_alpha), "", repr(r.coverage), r.status, "pass" if r.passed else "fail"]
        )
    return buf.getvalue()
