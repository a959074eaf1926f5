"""Critical values and power for the de novo CNV excess test.

Noncausal de novo CNVs detected at each of ``k`` hotspots are modelled as
Poisson with rate 2 mu n eps / k.  The genome-wide test rejects when the
largest hotspot count reaches the critical value; power at a causal locus
carried by a fraction p of cases follows Binomial(n, eps p).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np
from scipy import stats

from .core import ValidationError, rng_for
from .simulator import HotspotModel, inject_denovo


@dataclass(frozen=True)
class DesignScenario:
    mu: float = 0.1
    k: int = 500
    n: int = 1000
    epsilon: float = 0.75
    p_case: float = 0.01
    alpha: float = 0.05

    def __post_init__(self):
        if self.mu < 0 or self.k < 1 or self.n < 1:
            raise ValidationError(f"invalid scenario {self}")
        for v in (self.epsilon, self.p_case, self.alpha):
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"probability {v} outside [0, 1] in {self}")

    @property
    def locus_rate(self) -> float:
        return 2.0 * self.mu * self.n * self.epsilon / self.k


def max_poisson_tail(lam: float, k: int, x: int) -> float:
    """P(max of k iid Poisson(lam) >= x) = 1 - P(Poisson <= x-1)^k, in log space."""
    if lam < 0 or k < 1 or x < 0:
        raise ValidationError("need lam >= 0, k >= 1, x >= 0")
    if x == 0:
        return 1.0
    tail = stats.poisson.sf(x - 1, lam)
    return float(-np.expm1(k * np.log1p(-tail))) if tail < 1 else 1.0


def critical_value(s: DesignScenario) -> int:
    """Smallest x with P(M >= x) < alpha."""
    lam = s.locus_rate
    x = 0
    while max_poisson_tail(lam, s.k, x) >= s.alpha:
        x += 1
    return x


def denovo_power(s: DesignScenario, cv: int | None = None) -> float:
    """P(Binomial(n, eps p) >= CV), summed exactly."""
    cv = critical_value(s) if cv is None else cv
    return float(stats.binom.sf(cv - 1, s.n, s.epsilon * s.p_case))


def denovo_power_poisson(s: DesignScenario, cv: int | None = None) -> float:
    """Poisson approximation to :func:`denovo_power`."""
    cv = critical_value(s) if cv is None else cv
    return float(stats.poisson.sf(cv - 1, s.n * s.epsilon * s.p_case))


def fisher_zero_control_pvalue(x: int, m: int) -> float:
    """One-sided Fisher p for x carriers among m cases and none among m controls.

    Equals C(m, x) / C(2m, x).
    """
    return math.exp(sum(math.log((m - i) / (2 * m - i)) for i in range(x)))


def _fisher_threshold(m: int, alpha: float) -> int | None:
    logp, x = 0.0, 0
    la = math.log(alpha)
    while x < m:
        logp += math.log((m - x) / (2 * m - x))
        x += 1
        if logp <= la + 1e-12:
            return x
    return None


def case_control_sample_size(p_case: float, alpha: float = 1e-5, target_power: float = 0.8,
                             method: str = "normal", max_total: int = 10_000_000) -> int:
    """Total balanced case-control sample size reaching ``target_power``.

    The CNV is fully penetrant and absent from controls, so carriers occur
    in a fraction ``p_case`` of cases only.

    ``normal``: two-sided two-proportion z test with pooled variance,
    m = (z_{1-alpha/2} + z_power)^2 2 pbar (1 - pbar) / p_case^2 per group.
    ``fisher``: smallest m for which the one-sided Fisher test of
    (X, m; 0, m), X ~ Binomial(m, p_case), rejects with the target
    probability.
    """
    if not 0.0 < p_case < 1.0:
        raise ValidationError(f"p_case={p_case} must lie in (0, 1)")
    if method == "normal":
        z = stats.norm.isf(alpha / 2) + stats.norm.ppf(target_power)
        pbar = p_case / 2
        m = math.ceil(z * z * 2 * pbar * (1 - pbar) / (p_case * p_case))
        return 2 * m
    if method == "fisher":
        for m in range(1, max_total // 2 + 1):
            x = _fisher_threshold(m, alpha)
            if x is not None and stats.binom.sf(x - 1, m, p_case) >= target_power:
                return 2 * m
        raise ValidationError("no sample size up to max_total reaches the target power")
    raise ValidationError(f"unknown method {method!r}")


TABLE2_K = (500, 2000)
TABLE2_N = (500, 1000, 2000)
TABLE2_P = (0.01, 0.005, 0.0025)


@dataclass(frozen=True)
class DesignRow:
    scenario: DesignScenario
    locus_rate: float
    critical_value: int
    power: float
    sim_power: float | None = None
    sim_type1: float | None = None


@dataclass(frozen=True)
class DesignReport:
    rows: tuple
    case_control: dict  # p_case -> total sample size

    def lookup(self, k: int, n: int, p_case: float) -> DesignRow:
        for r in self.rows:
            s = r.scenario
            if s.k == k and s.n == n and s.p_case == p_case:
                return r
        raise KeyError((k, n, p_case))

    def to_tsv(self) -> str:
        cols = ["k", "n", "p_case", "mu", "epsilon", "alpha", "locus_rate", "cv", "power",
                "sim_power", "sim_type1", "case_control_n"]
        lines = ["\t".join(cols)]
        for r in self.rows:
            s = r.scenario
            cc = self.case_control.get(s.p_case)
            vals = [s.k, s.n, f"{s.p_case:g}", f"{s.mu:g}", f"{s.epsilon:g}", f"{s.alpha:g}",
                    f"{r.locus_rate:.6g}", r.critical_value, f"{r.power:.4f}",
                    "NA" if r.sim_power is None else f"{r.sim_power:.4f}",
                    "NA" if r.sim_type1 is None else f"{r.sim_type1:.4f}",
                    "NA" if cc is None else cc]
            lines.append("\t".join(str(v) for v in vals))
        return "\n".join(lines) + "\n"


def table2_grid(ks=TABLE2_K, ns=TABLE2_N, ps=TABLE2_P, base: DesignScenario | None = None):
    base = base or DesignScenario()
    return [replace(base, k=k, n=n, p_case=p) for k in ks for n in ns for p in ps]


def _replicate_seed(seed: int, r: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence([seed, stream, r]).generate_state(1, np.uint64)[0])


def simulate_design(s: DesignScenario, replicates: int = 10_000, seed: int = 0,
                    background: bool = False, cv: int | None = None) -> tuple[float, float]:
    """Monte-Carlo (power, genome-wide type I error) through :func:`inject_denovo`.

    With ``background`` the causal locus also receives its share of
    noncausal events at the per-hotspot rate.
    """
    cv = critical_value(s) if cv is None else cv
    model = HotspotModel(s.k, s.mu, s.epsilon)
    hits = false = 0
    for r in range(replicates):
        ev = inject_denovo(s.n, model, seed=_replicate_seed(seed, r), causal_fraction=s.p_case)
        causal = ev.causal_count
        if background:
            causal += int(rng_for(seed, "background", r).poisson(s.locus_rate))
        hits += causal >= cv
        false += ev.max_detected >= cv
    return hits / replicates, false / replicates


def table2_report(scenarios: Iterable[DesignScenario] | None = None, simulate: bool = False,
                  replicates: int = 10_000, seed: int = 0, cc_alpha: float = 1e-5,
                  cc_power: float = 0.8, cc_method: str = "normal") -> DesignReport:
    """Critical value and power per scenario, plus the case-control comparison column."""
    scenarios = list(scenarios) if scenarios is not None else table2_grid()
    rows = []
    for s in scenarios:
        cv = critical_value(s)
        sim_p = sim_t = None
        if simulate:
            sim_p, sim_t = simulate_design(s, replicates, seed, cv=cv)
        rows.append(DesignRow(s, s.locus_rate, cv, denovo_power(s, cv), sim_p, sim_t))
    cc = {}
    for p in sorted({s.p_case for s in scenarios}, reverse=True):
        if 0 < p < 1:
            cc[p] = case_control_sample_size(p, cc_alpha, cc_power, cc_method)
    return DesignReport(tuple(rows), cc)


def empirical_max_tail(lam: float, k: int, x: int, replicates: int, seed: int = 0) -> float:
    """Brute-force P(max of k Poisson(lam) >= x) from ``replicates`` draws."""
    rng = np.random.default_rng(seed)
    hits = 0
    for start in range(0, replicates, 1000):
        b = min(1000, replicates - start)
        hits += int((rng.poisson(lam, size=(b, k)).max(axis=1) >= x).sum())
    return hits / replicates


def null_type1(s: DesignScenario, replicates: int = 10_000, seed: int = 0, cv: int | None = None) -> float:
    """Genome-wide type I error of the max-count test under the null, via the simulator."""
    cv = critical_value(s) if cv is None else cv
    model = HotspotModel(s.k, s.mu, s.epsilon)
    false = 0
    for r in range(replicates):
        false += inject_denovo(s.n, model, seed=_replicate_seed(seed, r, 1)).max_detected >= cv
    return false / replicates

