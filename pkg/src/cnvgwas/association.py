"""CNV-disease association tests and the cost of calling error.

Allele-level 2x2 tables are laid out as::

    [[case_minor,    case_major],
     [control_minor, control_major]]

The expected-statistic helpers (:func:`expected_chi2`,
:func:`error_adjusted_chi2`, :func:`inflation_factor`) take frequencies as
parameters; the data-level tests take counts.  They are deliberately kept
apart.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .core import ValidationError


@dataclass(frozen=True)
class ErrorModel:
    """Calling error: P(O|C) sensitivity and P(O|A) false-positive rate."""

    p_call_given_minor: float
    p_call_given_major: float

    def __post_init__(self):
        for v in (self.p_call_given_minor, self.p_call_given_major):
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"probability {v} outside [0, 1]")
        if self.p_call_given_minor == self.p_call_given_major:
            raise ValidationError("P(O|C) == P(O|A): calls carry no information (infinite inflation factor)")
        if self.p_call_given_minor < self.p_call_given_major:
            raise ValidationError("P(O|C) must exceed P(O|A) for an informative caller")

    def p_called(self, p_minor: float) -> float:
        return self.p_call_given_minor * p_minor + self.p_call_given_major * (1.0 - p_minor)


@dataclass(frozen=True)
class AssocResult:
    statistic: float
    df: int
    pvalue: float
    direction: int  # +1 case excess of the minor allele, -1 deficit, 0 none
    test: str
    p_greater: float | None = None
    p_less: float | None = None


class UndefinedTest(ValidationError):
    """A test that cannot be computed for the given data (e.g. empty margin)."""


def _table(table) -> np.ndarray:
    t = np.asarray(table, dtype=float)
    if t.shape != (2, 2):
        raise ValidationError(f"expected a 2x2 table, got shape {t.shape}")
    if np.any(t < 0):
        raise ValidationError("table cells must be non-negative")
    return t


def _direction(t) -> int:
    r = t.sum(axis=1)
    if np.any(r == 0):
        return 0
    diff = t[0, 0] / r[0] - t[1, 0] / r[1]
    return int(np.sign(diff))


def expected_counts(table) -> np.ndarray:
    t = _table(table)
    return np.outer(t.sum(axis=1), t.sum(axis=0)) / t.sum()


def chi2_2x2(table) -> AssocResult:
    """Pearson chi-square (1 df, no continuity correction).

    Accepts fractional tables such as posterior-weighted counts.
    """
    t = _table(table)
    rows, cols = t.sum(axis=1), t.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise UndefinedTest("chi-square undefined: a margin of the table is empty")
    n = t.sum()
    stat = n * (t[0, 0] * t[1, 1] - t[0, 1] * t[1, 0]) ** 2 / (rows.prod() * cols.prod())
    return AssocResult(float(stat), 1, float(stats.chi2.sf(stat, 1)), _direction(t), "chi2")


def fisher_exact_2x2(table) -> AssocResult:
    """Fisher's exact test from the hypergeometric law of the case-minor cell.

    ``p_greater`` is the one-sided p-value for an excess of the minor allele
    in cases.  The two-sided p-value sums every table at most as probable as
    the observed one.  The statistic is the sample odds ratio.
    """
    t = _table(table)
    if not np.allclose(t, np.round(t)):
        raise ValidationError("Fisher's exact test needs integer counts")
    a, b, c, d = (int(round(v)) for v in t.ravel())
    row1, col1, n = a + b, a + c, a + b + c + d
    dist = stats.hypergeom(n, col1, row1)
    lo, hi = max(0, row1 + col1 - n), min(row1, col1)
    support = np.arange(lo, hi + 1)
    pmf = dist.pmf(support)
    p_obs = dist.pmf(a)
    p_greater = float(pmf[support >= a].sum())
    p_less = float(pmf[support <= a].sum())
    p_two = float(min(1.0, pmf[pmf <= p_obs * (1 + 1e-7)].sum()))
    with np.errstate(divide="ignore", invalid="ignore"):
        odds = (a * d) / (b * c) if b * c else (np.inf if a * d else np.nan)
    return AssocResult(float(odds), 0, p_two, _direction(t), "fisher",
                       min(1.0, p_greater), min(1.0, p_less))


def association_test(table) -> AssocResult:
    """Chi-square when every expected count is at least 5, otherwise Fisher."""
    t = _table(table)
    if np.any(t.sum(axis=0) == 0) or np.any(t.sum(axis=1) == 0):
        raise UndefinedTest("association undefined: a margin of the table is empty")
    if expected_counts(t).min() >= 5 or not np.allclose(t, np.round(t)):
        return chi2_2x2(t)
    return fisher_exact_2x2(t)


def expected_chi2(p_case: float, p_control: float, n: float) -> float:
    """Error-free expected statistic for ``n`` alleles per group.

    (P(C|case) - P(C|control))^2 n / (2 P(C)(1 - P(C))) with P(C) the
    pooled frequency.
    """
    pc = 0.5 * (p_case + p_control)
    return (p_case - p_control) ** 2 * n / (2 * pc * (1 - pc))


def error_adjusted_chi2(p_case: float, p_control: float, error: ErrorModel, n: float) -> float:
    """Expected statistic when minor alleles are called with ``error``."""
    pc = 0.5 * (p_case + p_control)
    po = error.p_called(pc)
    gap = error.p_call_given_minor - error.p_call_given_major
    return (gap * (p_case - p_control)) ** 2 * n / (2 * po * (1 - po))


def inflation_factor(p_minor: float, error: ErrorModel) -> tuple[float, float]:
    """Sample-size inflation from calling error and the tag-SNP r^2 with the same cost.

    IF = P(O)(1 - P(O)) / ((P(O|C) - P(O|A))^2 P(C)(1 - P(C))); r^2 = 1/IF.
    """
    if not 0.0 < p_minor < 1.0:
        raise ValidationError(f"P(C)={p_minor} must lie strictly inside (0, 1)")
    po = error.p_called(p_minor)
    gap = error.p_call_given_minor - error.p_call_given_major
    f = po * (1 - po) / (gap * gap * p_minor * (1 - p_minor))
    return f, 1.0 / f


def tag_snp_power_equivalence(r2: float, n: float) -> float:
    """Effective sample size when testing a tag SNP with LD ``r2`` to the CNV."""
    if not 0.0 < r2 <= 1.0:
        raise ValidationError(f"r^2={r2} must lie in (0, 1]")
    return n * r2


TABLE1_FREQS = (0.02, 0.05, 0.1, 0.2)
TABLE1_ERRORS = ((0.01, 0.9), (0.01, 0.8), (0.01, 0.7), (0.05, 0.9), (0.05, 0.8), (0.05, 0.7))


@dataclass(frozen=True)
class Table1Report:
    freqs: tuple
    errors: tuple  # (P(O|A), P(O|C)) rows
    inflation: np.ndarray  # (rows, freqs)
    r2: np.ndarray

    def cell(self, p_false: float, p_true: float, p_minor: float) -> tuple[float, float]:
        i = self.errors.index((p_false, p_true))
        j = self.freqs.index(p_minor)
        return float(self.inflation[i, j]), float(self.r2[i, j])

    def to_tsv(self, digits: int = 2) -> str:
        head = ["p_false", "p_true"]
        for f in self.freqs:
            head += [f"IF_{f:g}", f"r2_{f:g}"]
        lines = ["\t".join(head)]
        for i, (a, c) in enumerate(self.errors):
            row = [f"{a:g}", f"{c:g}"]
            for j in range(len(self.freqs)):
                row += [f"{self.inflation[i, j]:.{digits}f}", f"{self.r2[i, j]:.{digits}f}"]
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


def table1_report(freqs: Sequence[float] = TABLE1_FREQS,
                  errors: Sequence[tuple[float, float]] = TABLE1_ERRORS) -> Table1Report:
    """Inflation factor and equivalent r^2 over a grid of frequencies and error rates."""
    freqs, errors = tuple(freqs), tuple(tuple(e) for e in errors)
    inf = np.empty((len(errors), len(freqs)))
    r2 = np.empty_like(inf)
    for i, (a, c) in enumerate(errors):
        em = ErrorModel(c, a)
        for j, f in enumerate(freqs):
            inf[i, j], r2[i, j] = inflation_factor(f, em)
    return Table1Report(freqs, errors, inf, r2)


def cnv_load_test(counts, is_case, method: str = "poisson") -> AssocResult:
    """Compare genome-wide minor CNV allele counts between cases and controls.

    ``poisson``: conditional on the grand total, the case total is
    Binomial(total, n_case / n) under equal per-sample rates; the statistic
    is the rate ratio and the p-value is two-sided.  ``ranksum``:
    Mann-Whitney U on per-sample counts, robust to overdispersion.
    """
    counts = np.asarray(counts, dtype=float)
    is_case = np.asarray(is_case, dtype=bool)
    if counts.shape != is_case.shape:
        raise ValidationError("counts and labels must align")
    if np.any(counts < 0):
        raise ValidationError("counts must be non-negative")
    n1, n0 = int(is_case.sum()), int((~is_case).sum())
    if n1 == 0 or n0 == 0:
        raise UndefinedTest("load test needs both cases and controls")
    x1, x0 = counts[is_case], counts[~is_case]
    if method == "poisson":
        t1, t0 = int(x1.sum()), int(x0.sum())
        if t1 + t0 == 0:
            return AssocResult(1.0, 0, 1.0, 0, "load-poisson")
        ratio = (t1 / n1) / (t0 / n0) if t0 else np.inf
        res = stats.binomtest(t1, t1 + t0, n1 / (n1 + n0))
        direction = int(np.sign(t1 / n1 - t0 / n0))
        return AssocResult(float(ratio), 0, float(res.pvalue), direction, "load-poisson")
    if method == "ranksum":
        res = stats.mannwhitneyu(x1, x0, alternative="two-sided")
        direction = int(np.sign(x1.mean() - x0.mean()))
        return AssocResult(float(res.statistic), 0, float(res.pvalue), direction, "load-ranksum")
    raise ValidationError(f"unknown load test {method!r}")
