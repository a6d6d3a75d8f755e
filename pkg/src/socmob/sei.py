"""Cohort-specific socio-economic index (SEI) scores for occupations.

The score is the optimal scaling of occupation in the path model
AGE -> EDU -> SEI -> INC: occupation scores are re-estimated by alternating
least squares until the direct effect of education on income (beta_42)
stops falling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataValidationError
from .ingest import CohortScheme, Dataset, IndividualRecord, OccupationCatalogue, default_catalogue
from .stats import correlations, standardize, wls

SEI_LO = 1.0
SEI_HI = 80.0


@dataclass(frozen=True)
class SeiConfig:
    min_cell_size: int = 5
    tol: float = 1e-6
    max_iters: int = 100
    weighted: bool = False
    log_income: bool = False

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "SeiConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown sei settings {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class OccupationScore:
    raw: float
    rescaled: float
    n_heads: int
    inherited: bool = False


@dataclass(frozen=True)
class SeiTable:
    cohort: str
    scores: dict[int, OccupationScore]
    beta_43: float
    beta_32: float
    beta_41: float
    beta_31: float
    beta_21: float
    beta_42: float
    iterations: int
    converged: bool
    beta42_trace: tuple[float, ...] = ()
    best_iteration: int = 0
    n_heads: int = 0
    unscored: tuple[int, ...] = ()

    @property
    def raw(self) -> dict[int, float]:
        return {k: v.raw for k, v in self.scores.items()}

    @property
    def rescaled(self) -> dict[int, float]:
        return {k: v.rescaled for k, v in self.scores.items()}

    def score(self, code: int) -> float | None:
        s = self.scores.get(code)
        return None if s is None else s.rescaled


@dataclass(frozen=True)
class CohortAveragedScores:
    scores: dict[int, float]

    def score(self, code: int) -> float | None:
        return self.scores.get(code)


@dataclass
class AlsFit:
    """Result of the alternating least squares loop on person-level arrays."""

    codes: np.ndarray
    scores: np.ndarray
    betas: dict[str, float]
    iterations: int
    converged: bool
    trace: list[float] = field(default_factory=list)
    best_iteration: int = 0


def _group_means(values, index, n_groups, weights):
    num = np.bincount(index, weights=values * weights, minlength=n_groups)
    den = np.bincount(index, weights=weights, minlength=n_groups)
    return num / den


def fit_als(age, edu, inc, occ, weights=None, tol=1e-6, max_iters=100) -> AlsFit:
    """Alternating least squares on person-level arrays.

    ``weights`` (optional) enter every standardization, regression and
    occupation mean. AGE, EDU and INC are standardized once; the SEI
    variable is re-standardized on every pass.
    """
    occ = np.asarray(occ)
    codes, idx = np.unique(occ, return_inverse=True)
    k = len(codes)
    if k < 2:
        raise DataValidationError("SEI estimation needs at least 2 occupations")
    w = np.ones(len(occ)) if weights is None else np.asarray(weights, dtype=float)
    age = standardize(age, w)
    edu = standardize(edu, w)
    inc = standardize(inc, w)

    start = standardize(0.5 * edu + 0.5 * inc, w)
    scores = _group_means(start, idx, k, w)
    sei, scores = _standardized_assignment(scores, idx, w)

    trace: list[float] = []
    best = None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        f_inc = wls(inc, np.column_stack([age, sei]), w)
        b41, b43 = f_inc.slopes
        f_sei = wls(sei, np.column_stack([edu, age]), w)
        b32, b31 = f_sei.slopes
        b21 = wls(edu, age, w).slopes[0]

        sei_p = standardize(b43 * (inc - b41 * age) + b32 * edu + b31 * age, w)
        new_scores = _group_means(sei_p, idx, k, w)
        sei_pp, new_scores = _standardized_assignment(new_scores, idx, w)

        b42 = wls(inc, np.column_stack([age, edu, sei_pp]), w).slopes[1]
        trace.append(float(b42))
        betas = dict(beta_41=b41, beta_43=b43, beta_32=b32, beta_31=b31, beta_21=b21, beta_42=b42)
        betas = {name: float(v) for name, v in betas.items()}

        if best is not None and b42 > best[0]["beta_42"]:
            converged = True
            break
        previous = None if best is None else best[0]["beta_42"]
        best = (betas, new_scores, it)
        if previous is not None and previous - b42 < tol:
            converged = True
            break
        sei = sei_pp

    betas, scores, best_it = best
    return AlsFit(codes, scores, betas, it, converged, trace, best_it)


def _standardized_assignment(scores, idx, w):
    """Assign occupation scores to persons and standardize both consistently."""
    person = scores[idx]
    total = w.sum()
    m = np.dot(w, person) / total
    sd = math.sqrt(np.dot(w, (person - m) ** 2) / total)
    if sd == 0:
        # all occupations tied; keep the centred zero scale
        return person - m, scores - m
    return (person - m) / sd, (scores - m) / sd


def rescale_scores(raw: Mapping[int, float], lo: float = SEI_LO, hi: float = SEI_HI) -> dict[int, float]:
    """Affine min-max map of raw scores onto [lo, hi].

    Zero spread (including a single occupation) maps everything to the
    midpoint.
    """
    if not raw:
        return {}
    vals = list(raw.values())
    mn, mx = min(vals), max(vals)
    if mx == mn:
        mid = (lo + hi) / 2.0
        return {k: mid for k in raw}
    span = mx - mn
    return {k: lo + (hi - lo) * (v - mn) / span for k, v in raw.items()}


def estimate_sei(
    heads: Sequence[IndividualRecord],
    cohort: str,
    config: SeiConfig | None = None,
    catalogue: OccupationCatalogue | None = None,
) -> SeiTable:
    """Fit the SEI model on one cohort's household heads.

    Heads without an income proxy are skipped. Occupations with fewer than
    ``min_cell_size`` heads are left out of the fit and take the mean raw
    score of fitted occupations sharing their 1-digit code.
    """
    config = config or SeiConfig()
    catalogue = catalogue or default_catalogue()
    heads = [h for h in heads if h.income_proxy is not None]
    counts: dict[int, int] = {}
    for h in heads:
        counts[h.occupation_code] = counts.get(h.occupation_code, 0) + 1
    big = {c for c, n in counts.items() if n >= config.min_cell_size}
    fitted = [h for h in heads if h.occupation_code in big]
    if len(big) < 2:
        raise DataValidationError(f"cohort {cohort}: fewer than 2 occupations with >= {config.min_cell_size} heads")

    age = np.array([h.age for h in fitted], dtype=float)
    edu = np.array([h.education_years for h in fitted], dtype=float)
    inc = np.array([h.income_proxy for h in fitted], dtype=float)
    if config.log_income:
        inc = np.log1p(inc)
    occ = np.array([h.occupation_code for h in fitted])
    w = np.array([h.sample_weight for h in fitted]) if config.weighted else None
    fit = fit_als(age, edu, inc, occ, w, tol=config.tol, max_iters=config.max_iters)

    raw = {int(c): float(s) for c, s in zip(fit.codes, fit.scores)}
    inherited = {}
    unscored = []
    for code in sorted(set(counts) - big):
        parent = catalogue.one_digit(code)
        siblings = [s for c, s in raw.items() if catalogue.one_digit(c) == parent]
        if siblings:
            inherited[code] = float(np.mean(siblings))
        else:
            unscored.append(code)
    all_raw = {**raw, **inherited}
    rescaled = rescale_scores(all_raw)
    scores = {
        code: OccupationScore(all_raw[code], rescaled[code], counts[code], code in inherited)
        for code in sorted(all_raw)
    }
    return SeiTable(
        cohort=cohort,
        scores=scores,
        iterations=fit.iterations,
        converged=fit.converged,
        beta42_trace=tuple(fit.trace),
        best_iteration=fit.best_iteration,
        n_heads=len(heads),
        unscored=tuple(unscored),
        **fit.betas,
    )


def cohort_heads(records: Iterable[IndividualRecord], start: int, end: int) -> list[IndividualRecord]:
    return [r for r in records if r.is_household_head and start <= r.birth_year <= end]


def estimate_cohort_tables(
    records_by_source: Mapping[Dataset, Sequence[IndividualRecord]],
    scheme: CohortScheme,
    config: SeiConfig | None = None,
    catalogue: OccupationCatalogue | None = None,
) -> list[SeiTable]:
    """One SeiTable per cohort, each fitted on heads from its source dataset."""
    tables = []
    for c in scheme.cohorts:
        records = records_by_source.get(c.sei_source)
        if records is None:
            raise DataValidationError(f"cohort {c.label} needs {c.sei_source.value} records, none supplied")
        tables.append(estimate_sei(cohort_heads(records, c.start, c.end), c.label, config, catalogue))
    return tables


def average_across_cohorts(tables: Sequence[SeiTable]) -> CohortAveragedScores:
    if not tables:
        raise ValueError("no SEI tables to average")
    sums: dict[int, list[float]] = {}
    for t in tables:
        for code, s in t.scores.items():
            sums.setdefault(code, []).append(s.rescaled)
    return CohortAveragedScores({code: float(np.mean(v)) for code, v in sorted(sums.items())})


@dataclass(frozen=True)
class StabilityRow:
    cohort: str
    pearson: float
    spearman: float
    kendall: float
    n_common: int


def cohort_stability(tables: Sequence[SeiTable], min_overlap: int = 3) -> list[StabilityRow]:
    """Correlation of each cohort's rescaled scores with the previous cohort's.

    The first cohort has no predecessor and reports zeros.
    """
    rows = []
    for i, t in enumerate(tables):
        if i == 0:
            rows.append(StabilityRow(t.cohort, 0.0, 0.0, 0.0, 0))
            continue
        prev = tables[i - 1]
        common = sorted(set(t.scores) & set(prev.scores))
        if len(common) < min_overlap:
            raise DataValidationError(
                f"cohorts {prev.cohort} and {t.cohort} share only {len(common)} occupations"
            )
        a = [t.scores[c].rescaled for c in common]
        b = [prev.scores[c].rescaled for c in common]
        p, s, k = correlations(a, b)
        rows.append(StabilityRow(t.cohort, p, s, k, len(common)))
    return rows
