"""Non-parametric statistics for within-subjects Likert comparisons.

Friedman (tie-corrected) for omnibus differences across workflows, Wilcoxon
signed-rank with a normal approximation for pairwise follow-ups, Kendall's W
for concordance, and the |z|/sqrt(n) effect-size convention. Rank statistics
are computed in exact rational arithmetic and converted to float once, so they
can be cross-checked against independent formula evaluations bit-for-bit.

Tail probabilities come from the regularized incomplete gamma function
(power series for x < a+1, Lentz continued fraction otherwise), which supplies
both the chi-square survival function and, through erfc(x) = Q(1/2, x^2), the
normal CDF. Absolute error is far below the 1e-7 documented here.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

_EPS = 1e-15
_MAX_ITER = 500


class NoVariation(ValueError):
    """All paired differences are zero; the signed-rank test is undefined."""


class AdviseExact(ValueError):
    """Too few non-zero pairs for the normal approximation; use an exact test."""


# -- tail probabilities -------------------------------------------------------


def _gamma_p_series(a: float, x: float) -> float:
    # Regularized lower incomplete gamma via its power series.
    term = 1.0 / a
    total = term
    n = a
    for _ in range(_MAX_ITER):
        n += 1.0
        term *= x / n
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))

def _gamma_q_contfrac(a: float, x: float) -> float:
    # Regularized upper incomplete gamma via Lentz's continued fraction.
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_q(a: float, x: float) -> float:
    """Q(a, x) = Gamma(a, x)/Gamma(a), the upper regularized incomplete gamma."""
    if a <= 0:
        raise ValueError(f"a must be positive, got {a}")
    if x < 0:
        raise ValueError(f"x must be non-negative, got {x}")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_contfrac(a, x)


def chi2_sf(x: float, df: int) -> float:
    """Upper tail of the chi-square distribution with ``df`` degrees of freedom."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if x <= 0:
        return 1.0
    return regularized_gamma_q(df / 2.0, x / 2.0)


def normal_cdf(z: float) -> float:
    """Standard normal CDF via erfc(x) = Q(1/2, x^2)."""
    if z == 0.0:
        return 0.5
    half_erfc = 0.5 * regularized_gamma_q(0.5, z * z / 2.0)
    return half_erfc if z < 0 else 1.0 - half_erfc


def p_from_z(z: float) -> float:
    """One-sided p-value for a z statistic: the lower normal tail."""
    if not math.isfinite(z):
        raise ValueError(f"z must be finite, got {z}")
    return normal_cdf(z)


def effect_size_r(z: float, n: int) -> float:
    """Pairwise effect size r = |z| / sqrt(n)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return abs(z) / math.sqrt(n)


# -- rank machinery -----------------------------------------------------------


def midranks(values: Sequence[float]) -> list[Fraction]:
    """1-based ranks with tie groups sharing their average rank (exact halves)."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks: list[Fraction] = [Fraction(0)] * len(values)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = Fraction(i + j + 2, 2)
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _tie_groups(values: Sequence[float]) -> list[int]:
    counts: dict[float, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    return [t for t in counts.values() if t > 1]


@dataclass(frozen=True)
class FriedmanResult:
    chi2: float
    df: int
    p: float


def _validate_table(rows: Sequence[Sequence[float]]) -> tuple[int, int]:
    n = len(rows)
    if n < 2:
        raise ValueError(f"need at least 2 complete rows, got {n}")
    k = len(rows[0])
    if k < 2:
        raise ValueError(f"need at least 2 columns, got {k}")
    for row in rows:
        if len(row) != k:
            raise ValueError("ragged table")
        for cell in row:
            if cell is None:
                raise ValueError("missing cells must be removed (listwise) before testing")
    return n, k


def friedman(rows: Sequence[Sequence[float]]) -> FriedmanResult:
    """Tie-corrected Friedman test over an n-subjects x k-treatments table.

    chi2 = [12/(n k (k+1)) * sum_j R_j^2 - 3 n (k+1)] / C with the tie
    correction C = 1 - sum(t^3 - t) / (n k (k^2 - 1)); df = k - 1. A fully
    degenerate table (every row constant) reports chi2 = 0, p = 1.
    """
    n, k = _validate_table(rows)
    column_sums = [Fraction(0)] * k
    tie_sum = 0
    for row in rows:
        for j, rank in enumerate(midranks(row)):
            column_sums[j] += rank
        for t in _tie_groups(row):
            tie_sum += t**3 - t
    uncorrected = (
        Fraction(12, n * k * (k + 1)) * sum(r * r for r in column_sums)
        - 3 * n * (k + 1)
    )
    correction = 1 - Fraction(tie_sum, n * k * (k * k - 1))
    df = k - 1
    if correction == 0:
        return FriedmanResult(0.0, df, 1.0)
    chi2 = float(uncorrected / correction)
    return FriedmanResult(chi2, df, chi2_sf(chi2, df))


def kendalls_w(rows: Sequence[Sequence[float]]) -> float:
    """Kendall's coefficient of concordance: W = chi2_F / (n (k - 1))."""
    n, k = _validate_table(rows)
    result = friedman(rows)
    return result.chi2 / (n * (k - 1))


@dataclass(frozen=True)
class WilcoxonResult:
    z: float
    p_one_sided: float
    n_effective: int


def wilcoxon_signed_rank(
    a: Sequence[float],
    b: Sequence[float],
    alternative: str = "less",
) -> WilcoxonResult:
    """Paired signed-rank test with the tie-corrected normal approximation.

    Differences a - b drop zeros, |d| gets mid-ranks, and
    z = (W+ - mu) / sigma with mu = m(m+1)/4 and
    sigma^2 = m(m+1)(2m+1)/24 - sum(t^3 - t)/48 (no continuity correction).
    ``alternative`` picks the tail: "less" tests a < b, "greater" the
    mirror, "two-sided" doubles the smaller tail.
    """
    if len(a) != len(b):
        raise ValueError(f"paired samples differ in length: {len(a)} vs {len(b)}")
    if alternative not in ("less", "greater", "two-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    diffs = [x - y for x, y in zip(a, b)]
    nonzero = [d for d in diffs if d != 0]
    m = len(nonzero)
    if m == 0:
        raise NoVariation("all paired differences are zero")
    if m < 5:
        raise AdviseExact(
            f"only {m} non-zero pairs; the normal approximation needs at least 5"
        )
    magnitudes = [abs(d) for d in nonzero]
    ranks = midranks(magnitudes)
    w_plus = sum((r for d, r in zip(nonzero, ranks) if d > 0), Fraction(0))
    mu = Fraction(m * (m + 1), 4)
    tie_sum = sum(t**3 - t for t in _tie_groups(magnitudes))
    variance = Fraction(m * (m + 1) * (2 * m + 1), 24) - Fraction(tie_sum, 48)
    sigma = math.sqrt(float(variance))
    z = float(w_plus - mu) / sigma
    if alternative == "less":
        p = normal_cdf(z)
    elif alternative == "greater":
        p = normal_cdf(-z)
    else:
        p = 2.0 * normal_cdf(-abs(z))
    return WilcoxonResult(z, min(1.0, p), m)


# -- Likert tables and the full report ----------------------------------------


@dataclass
class LikertTable:
    """participants x workflows score matrix for one measure (cells 1-7 or None)."""

    measure: str
    workflows: list[str]
    participants: list[str]
    cells: list[list[Optional[int]]]

    def __post_init__(self) -> None:
        if len(self.workflows) < 2:
            raise ValueError("a Likert table needs at least 2 workflow columns")
        for row in self.cells:
            if len(row) != len(self.workflows):
                raise ValueError("ragged Likert table")
            for cell in row:
                if cell is not None and not 1 <= cell <= 7:
                    raise ValueError(f"Likert scores are 1-7, got {cell}")

    def complete_rows(self) -> list[list[int]]:
        """Rows with no missing cells (listwise deletion)."""
        return [list(row) for row in self.cells if all(c is not None for c in row)]

    @classmethod
    def from_records(
        cls,
        measure: str,
        records: Iterable[tuple[str, str, int]],
        workflows: Optional[list[str]] = None,
    ) -> "LikertTable":
        """Build a table from (participant, workflow, score) records."""
        by_participant: dict[str, dict[str, int]] = {}
        seen_workflows: list[str] = list(workflows) if workflows else []
        for participant, workflow, score in records:
            if workflow not in seen_workflows:
                if workflows is not None:
                    raise ValueError(f"unexpected workflow {workflow!r}")
                seen_workflows.append(workflow)
            by_participant.setdefault(participant, {})[workflow] = score
        seen_workflows = sorted(seen_workflows) if workflows is None else seen_workflows
        participants = list(by_participant)
        cells = [
            [by_participant[p].get(w) for w in seen_workflows]
            for p in participants
        ]
        return cls(measure, seen_workflows, participants, cells)


def parse_likert_csv(text: str) -> dict[str, LikertTable]:
    """Parse ``participant,workflow,measure,score`` rows into per-measure tables."""
    reader = csv.DictReader(io.StringIO(text))
    required = {"participant", "workflow", "measure", "score"}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        raise ValueError(f"CSV must have columns {sorted(required)}, got {reader.fieldnames}")
    records: dict[str, list[tuple[str, str, int]]] = {}
    for i, row in enumerate(reader, start=2):
        try:
            score = int(row["score"])
        except (TypeError, ValueError):
            raise ValueError(f"line {i}: score {row['score']!r} is not an integer") from None
        records.setdefault(row["measure"], []).append((row["participant"], row["workflow"], score))
    return {
        measure: LikertTable.from_records(measure, recs) for measure, recs in records.items()
    }


@dataclass
class PairResult:
    a: str
    b: str
    z: Optional[float] = None
    p_one_sided: Optional[float] = None
    r: Optional[float] = None
    n_effective: Optional[int] = None
    error: Optional[str] = None


@dataclass
class MeasureReport:
    measure: str
    n_used: int
    friedman_chi2: float
    friedman_df: int
    friedman_p: float
    kendalls_w: float
    pairs: list[PairResult] = field(default_factory=list)


@dataclass
class TestReport:
    measures: list[MeasureReport]
    alternative: str

    def to_json(self) -> str:
        payload = {
            "alternative": self.alternative,
            "measures": [
                {
                    "measure": m.measure,
                    "n_used": m.n_used,
                    "friedman": {"chi2": m.friedman_chi2, "df": m.friedman_df, "p": m.friedman_p},
                    "kendalls_w": m.kendalls_w,
                    "pairs": [
                        {
                            "a": p.a,
                            "b": p.b,
                            "z": p.z,
                            "p_one_sided": p.p_one_sided,
                            "r": p.r,
                            "n_effective": p.n_effective,
                            "error": p.error,
                        }
                        for p in m.pairs
                    ],
                }
                for m in self.measures
            ],
        }
        return json.dumps(payload, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["measure", "n_used", "friedman_chi2", "friedman_df", "friedman_p", "kendalls_w", "pair", "z", "p_one_sided", "r", "n_effective", "error"]
        )
        for m in self.measures:
            writer.writerow(
                [m.measure, m.n_used, m.friedman_chi2, m.friedman_df, m.friedman_p, m.kendalls_w, "", "", "", "", "", ""]
            )
            for p in m.pairs:
                writer.writerow(
                    ["", "", "", "", "", "", f"{p.a} vs {p.b}", p.z, p.p_one_sided, p.r, p.n_effective, p.error or ""]
                )
        return buf.getvalue()


def analyze(tables: Iterable[LikertTable], alternative: str = "less") -> TestReport:
    """Omnibus plus pairwise statistics for every measure, deterministic order."""
    measures = []
    for table in tables:
        rows = table.complete_rows()
        fr = friedman(rows)
        w = kendalls_w(rows)
        report = MeasureReport(
            measure=table.measure,
            n_used=len(rows),
            friedman_chi2=fr.chi2,
            friedman_df=fr.df,
            friedman_p=fr.p,
            kendalls_w=w,
        )
        k = len(table.workflows)
        for i in range(k):
            for j in range(i + 1, k):
                a_label, b_label = table.workflows[i], table.workflows[j]
                a = [row[i] for row in rows]
                b = [row[j] for row in rows]
                try:
                    res = wilcoxon_signed_rank(a, b, alternative=alternative)
                    report.pairs.append(
                        PairResult(
                            a=a_label,
                            b=b_label,
                            z=res.z,
                            p_one_sided=res.p_one_sided,
                            r=effect_size_r(res.z, res.n_effective),
                            n_effective=res.n_effective,
                        )
                    )
                except (NoVariation, AdviseExact) as exc:
                    report.pairs.append(PairResult(a=a_label, b=b_label, error=str(exc)))
        measures.append(report)
    return TestReport(measures=measures, alternative=alternative)
