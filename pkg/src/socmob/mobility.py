"""Rank-rank mobility estimates per social group and son birth cohort.

Sons and fathers are ranked on the pooled (all-group) status distribution of
each son cohort; group estimates then use only that group's pairs.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .errors import (
    DataValidationError,
    DegenerateVariableError,
    InsufficientPairsError,
    NumericalError,
    SingularDesignError,
    UnstableBootstrapError,
)
from .ingest import GROUP_ORDER, ExclusionReport, FatherSonPair, SocialGroup
from .sei import CohortAveragedScores, SeiTable
from .stats import weighted_percentile_ranks, wls


class Dimension(enum.Enum):
    OCCUPATION_SEI = "occupation_sei"
    OCCUPATION_SEI_CONSTANT = "occupation_sei_constant"
    EDUCATION_YEARS = "education_years"

    @classmethod
    def parse(cls, text) -> "Dimension":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "_")
        aliases = {
            "occupation": cls.OCCUPATION_SEI,
            "occupation_constant": cls.OCCUPATION_SEI_CONSTANT,
            "education": cls.EDUCATION_YEARS,
        }
        if key in aliases:
            return aliases[key]
        return cls(key)

    @property
    def cli_name(self) -> str:
        return {
            "occupation_sei": "occupation",
            "occupation_sei_constant": "occupation-constant",
            "education_years": "education",
        }[self.value]


class Estimator(enum.Enum):
    P25 = "p25"
    P75 = "p75"
    BOTTOM_HALF = "interval_bottom_half"
    TOP_HALF = "interval_top_half"

    @classmethod
    def parse(cls, text) -> "Estimator":
        if isinstance(text, cls):
            return text
        return cls(str(text).strip().lower().replace("-", "_"))


@dataclass(frozen=True)
class BootstrapConfig:
    resample_count: int | None = None  # None: one resample per observation
    resample_size: int | None = None  # None: cohort size
    confidence_level: float = 0.95
    seed: int = 0
    max_failure_share: float = 0.2

    def __post_init__(self):
        if self.resample_count is not None and self.resample_count < 100:
            raise ValueError("resample_count must be >= 100")
        if self.resample_size is not None and self.resample_size < 1:
            raise ValueError("resample_size must be positive")
        if not 0 < self.confidence_level < 1:
            raise ValueError("confidence_level must lie in (0, 1)")

    @property
    def z(self) -> float:
        return float(norm.ppf(0.5 + self.confidence_level / 2.0))


@dataclass(frozen=True)
class MobilityEstimate:
    group: SocialGroup | None
    cohort: str
    dimension: Dimension
    estimator: Estimator
    point: float
    ci_low: float
    ci_high: float
    n_pairs: int
    slope: float
    intercept: float
    sample_estimate: float = float("nan")
    sd: float = 0.0
    n_resamples: int = 0
    n_failed: int = 0


@dataclass
class RankedPairs:
    """Columnar ranked father-son pairs for one status dimension."""

    dimension: Dimension
    son_status: np.ndarray
    father_status: np.ndarray
    son_rank: np.ndarray
    father_rank: np.ndarray
    group: np.ndarray  # SocialGroup objects
    cohort: np.ndarray  # son cohort labels
    weight: np.ndarray
    report: ExclusionReport = field(default_factory=ExclusionReport)

    def __len__(self):
        return len(self.son_rank)

    def mask(self, group=None, cohort=None) -> np.ndarray:
        m = np.ones(len(self), dtype=bool)
        if group is not None:
            m &= self.group == SocialGroup.parse(group)
        if cohort is not None:
            m &= self.cohort == cohort
        return m

    def subset(self, m: np.ndarray) -> "RankedPairs":
        return RankedPairs(
            self.dimension,
            self.son_status[m],
            self.father_status[m],
            self.son_rank[m],
            self.father_rank[m],
            self.group[m],
            self.cohort[m],
            self.weight[m],
            self.report,
        )

    def select(self, group=None, cohort=None) -> "RankedPairs":
        return self.subset(self.mask(group, cohort))

    @property
    def cohorts(self) -> list[str]:
        return sorted(set(self.cohort.tolist()))

    @property
    def groups(self) -> list[SocialGroup]:
        present = set(self.group.tolist())
        return [g for g in GROUP_ORDER if g in present]


def status_values(
    pairs: Iterable[FatherSonPair],
    dimension,
    sei_tables: Mapping[str, SeiTable] | Sequence[SeiTable] | None = None,
    averaged: CohortAveragedScores | None = None,
):
    """Status of son and father for each pair; unresolved pairs are reported."""
    dimension = Dimension.parse(dimension)
    if sei_tables is not None and not isinstance(sei_tables, Mapping):
        sei_tables = {t.cohort: t for t in sei_tables}
    report = ExclusionReport()
    kept = []
    for p in pairs:
        report.n_input += 1
        if dimension is Dimension.EDUCATION_YEARS:
            s, f = float(p.son.education_years), float(p.father.education_years)
        elif dimension is Dimension.OCCUPATION_SEI:
            if sei_tables is None:
                raise DataValidationError("occupation dimension needs SEI tables")
            s = _lookup(sei_tables.get(p.son_cohort), p.son.occupation_code)
            f = _lookup(sei_tables.get(p.father_cohort), p.father.occupation_code)
        else:
            if averaged is None:
                raise DataValidationError("constant-SEI dimension needs cohort-averaged scores")
            s = averaged.score(p.son.occupation_code)
            f = averaged.score(p.father.occupation_code)
        if s is None:
            report.exclude("son-score-unresolved")
            continue
        if f is None:
            report.exclude("father-score-unresolved")
            continue
        kept.append((p, s, f))
        report.n_accepted += 1
    return kept, report


def _lookup(table, code):
    return None if table is None else table.score(code)


def rank_pairs(
    pairs: Iterable[FatherSonPair],
    dimension,
    sei_tables=None,
    averaged: CohortAveragedScores | None = None,
) -> RankedPairs:
    """Weighted percentile ranks of sons and fathers within each son cohort."""
    dimension = Dimension.parse(dimension)
    kept, report = status_values(pairs, dimension, sei_tables, averaged)
    return rank_statuses(
        son_status=[k[1] for k in kept],
        father_status=[k[2] for k in kept],
        group=[k[0].group for k in kept],
        cohort=[k[0].son_cohort for k in kept],
        weight=[k[0].household_weight for k in kept],
        dimension=dimension,
        report=report,
    )


def rank_statuses(son_status, father_status, group, cohort, weight=None, dimension=Dimension.OCCUPATION_SEI, report=None):
    """Build RankedPairs from aligned status arrays (ranked within each cohort)."""
    son_status = np.asarray(son_status, dtype=float)
    father_status = np.asarray(father_status, dtype=float)
    n = len(son_status)
    weight = np.ones(n) if weight is None else np.asarray(weight, dtype=float)
    group_arr = np.empty(n, dtype=object)
    group_arr[:] = [SocialGroup.parse(g) for g in group]
    cohort_arr = np.empty(n, dtype=object)
    cohort_arr[:] = list(cohort)
    son_rank = np.empty(n)
    father_rank = np.empty(n)
    for c in sorted(set(cohort_arr.tolist())):
        m = cohort_arr == c
        son_rank[m] = weighted_percentile_ranks(son_status[m], weight[m])
        father_rank[m] = weighted_percentile_ranks(father_status[m], weight[m])
    return RankedPairs(
        Dimension.parse(dimension), son_status, father_status, son_rank, father_rank,
        group_arr, cohort_arr, weight, report if report is not None else ExclusionReport(),
    )


# --------------------------------------------------------------------------
# Point estimates


def _point(x, y, w, estimator: Estimator) -> float:
    if estimator in (Estimator.P25, Estimator.P75):
        fit = wls(y, x, w)
        at = 25.0 if estimator is Estimator.P25 else 75.0
        return fit.intercept + fit.slopes[0] * at
    m = x < 50.0 if estimator is Estimator.BOTTOM_HALF else x > 50.0
    if not m.any():
        raise DegenerateVariableError("degenerate-variable: no fathers in the requested half")
    return float(np.dot(w[m], y[m]) / w[m].sum())


def estimate_mobility(
    ranked: RankedPairs,
    estimator,
    group=None,
    cohort=None,
    min_pairs: int = 10,
) -> MobilityEstimate:
    """Full-sample estimate for one group and cohort (no interval)."""
    estimator = Estimator.parse(estimator)
    sub = ranked.select(group, cohort)
    n = len(sub)
    if n < min_pairs:
        raise InsufficientPairsError(f"insufficient-pairs: {n} < {min_pairs}")
    x, y, w = sub.father_rank, sub.son_rank, sub.weight
    if np.ptp(x) == 0:
        raise DegenerateVariableError("degenerate-variable: father ranks have zero variance")
    fit = wls(y, x, w)
    point = _point(x, y, w, estimator)
    return MobilityEstimate(
        group=None if group is None else SocialGroup.parse(group),
        cohort=cohort if cohort is not None else ",".join(sub.cohorts),
        dimension=ranked.dimension,
        estimator=estimator,
        point=point,
        ci_low=point,
        ci_high=point,
        n_pairs=n,
        slope=float(fit.slopes[0]),
        intercept=fit.intercept,
        sample_estimate=point,
    )


# --------------------------------------------------------------------------
# Bootstrap


def cell_key(*parts) -> int:
    """Stable 63-bit integer for seeding a bootstrap cell."""
    text = "|".join(str(getattr(p, "value", p)) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


class _BlockRanker:
    """Re-ranks resampled values without re-sorting.

    Values are mapped once to their sorted tie blocks; a resample only needs
    the weight per block.
    """

    def __init__(self, values):
        self.uniq, self.inverse = np.unique(values, return_inverse=True)

    def ranks(self, idx, w):
        inv = self.inverse[idx]
        block = np.bincount(inv, weights=w, minlength=len(self.uniq))
        below = np.cumsum(block) - block
        return (100.0 * (below + block / 2.0) / block.sum())[inv]


def _fast_point(x, y, w, estimator: Estimator) -> float | None:
    """Closed-form resample estimate; None marks a degenerate draw."""
    if estimator in (Estimator.P25, Estimator.P75):
        sw = w.sum()
        mx = np.dot(w, x) / sw
        my = np.dot(w, y) / sw
        dx = x - mx
        sxx = np.dot(w, dx * dx)
        if not sxx > 1e-12 * sw:
            return None
        slope = np.dot(w, dx * (y - my)) / sxx
        at = 25.0 if estimator is Estimator.P25 else 75.0
        return float(my + slope * (at - mx))
    m = x < 50.0 if estimator is Estimator.BOTTOM_HALF else x > 50.0
    if not m.any():
        return None
    return float(np.dot(w[m], y[m]) / w[m].sum())


def bootstrap_cohort(
    ranked: RankedPairs,
    cohort: str,
    estimators: Sequence,
    config: BootstrapConfig,
    groups: Sequence | None = None,
    min_pairs: int = 10,
) -> dict[tuple[SocialGroup, Estimator], MobilityEstimate | Exception]:
    """Bootstrap every (group, estimator) cell of one son cohort.

    Each replicate resamples the whole cohort with replacement, re-ranks sons
    and fathers on the resampled pooled distribution and re-estimates every
    cell. Replicate r draws from a generator seeded by (seed, dimension,
    cohort, r), so results do not depend on evaluation order. Cells that
    cannot be estimated map to the exception explaining why.
    """
    estimators = [Estimator.parse(e) for e in estimators]
    data = ranked.select(cohort=cohort)
    groups = data.groups if groups is None else [SocialGroup.parse(g) for g in groups]
    n = len(data)
    out: dict = {}

    live = []
    for g in groups:
        for e in estimators:
            try:
                est = estimate_mobility(data, e, group=g, cohort=cohort, min_pairs=min_pairs)
            except (NumericalError, SingularDesignError) as exc:
                out[(g, e)] = exc
                continue
            live.append((g, e, est))
    if not live:
        return out

    size = config.resample_size or n
    count = config.resample_count or n
    key = cell_key(ranked.dimension, cohort)
    son_blocks = _BlockRanker(data.son_status)
    father_blocks = _BlockRanker(data.father_status)
    group_codes = np.array([GROUP_ORDER.index(g) for g in data.group.tolist()])
    draws = {(g, e): [] for g, e, _ in live}
    failed = {(g, e): 0 for g, e, _ in live}
    wanted = sorted({g for g, _, _ in live}, key=GROUP_ORDER.index)

    for r in range(count):
        rng = np.random.default_rng([config.seed, key, r])
        idx = rng.integers(0, n, size)
        w = data.weight[idx]
        y = son_blocks.ranks(idx, w)
        x = father_blocks.ranks(idx, w)
        gc = group_codes[idx]
        for g in wanted:
            m = gc == GROUP_ORDER.index(g)
            gx, gy, gw = x[m], y[m], w[m]
            for e in estimators:
                if (g, e) not in draws:
                    continue
                v = _fast_point(gx, gy, gw, e) if len(gx) >= 2 else None
                if v is None:
                    failed[(g, e)] += 1
                else:
                    draws[(g, e)].append(v)

    z = config.z
    for g, e, est in live:
        vals = np.array(draws[(g, e)])
        nf = failed[(g, e)]
        if nf > config.max_failure_share * count or len(vals) < 2:
            out[(g, e)] = UnstableBootstrapError(f"unstable-bootstrap: {nf} of {count} resamples failed")
            continue
        point = float(vals.mean())
        sd = float(vals.std(ddof=1))
        out[(g, e)] = MobilityEstimate(
            group=g,
            cohort=cohort,
            dimension=ranked.dimension,
            estimator=e,
            point=point,
            ci_low=point - z * sd,
            ci_high=point + z * sd,
            n_pairs=est.n_pairs,
            slope=est.slope,
            intercept=est.intercept,
            sample_estimate=est.point,
            sd=sd,
            n_resamples=len(vals),
            n_failed=nf,
        )
    return out


def bootstrap_ci(
    ranked: RankedPairs,
    group,
    cohort: str,
    estimator,
    config: BootstrapConfig,
    min_pairs: int = 10,
) -> MobilityEstimate:
    """Bootstrap estimate and normal-approximation interval for one cell."""
    g = SocialGroup.parse(group)
    e = Estimator.parse(estimator)
    res = bootstrap_cohort(ranked, cohort, [e], config, groups=[g], min_pairs=min_pairs)[(g, e)]
    if isinstance(res, Exception):
        raise res
    return res


# --------------------------------------------------------------------------
# Reporting


@dataclass
class MobilityReport:
    estimates: list[MobilityEstimate]
    failures: dict = field(default_factory=dict)

    def cohorts(self, dimension=None) -> list[str]:
        return sorted({e.cohort for e in self._filter(dimension)})

    def _filter(self, dimension=None, estimator=None):
        out = self.estimates
        if dimension is not None:
            d = Dimension.parse(dimension)
            out = [e for e in out if e.dimension is d]
        if estimator is not None:
            k = Estimator.parse(estimator)
            out = [e for e in out if e.estimator is k]
        return out

    def cell(self, dimension, estimator, group, cohort) -> MobilityEstimate | None:
        g = SocialGroup.parse(group)
        for e in self._filter(dimension, estimator):
            if e.group is g and e.cohort == cohort:
                return e
        return None

    def grid(self, dimension, estimator, cohorts: Sequence[str] | None = None) -> list[list[str]]:
        """Group-by-cohort table; cells read "point, (n=N)" or blank."""
        cells = self._filter(dimension, estimator)
        cohorts = list(cohorts) if cohorts is not None else sorted({e.cohort for e in cells})
        groups = [g for g in GROUP_ORDER if any(e.group is g for e in cells)]
        lookup = {(e.group, e.cohort): e for e in cells}
        rows = [["group", *cohorts]]
        for g in groups:
            row = [g.value]
            for c in cohorts:
                e = lookup.get((g, c))
                row.append("" if e is None else f"{e.point:.2f}, (n={e.n_pairs})")
            rows.append(row)
        return rows

    def plot_rows(self, dimension, estimator) -> list[list]:
        rows = [["group", "cohort", "point", "ci_low", "ci_high", "n"]]
        cells = sorted(self._filter(dimension, estimator), key=lambda e: (GROUP_ORDER.index(e.group), e.cohort))
        for e in cells:
            rows.append([e.group.value, e.cohort, f"{e.point:.6f}", f"{e.ci_low:.6f}", f"{e.ci_high:.6f}", e.n_pairs])
        return rows


def mobility_report(
    ranked_by_dimension: Mapping[Dimension, RankedPairs] | Iterable[RankedPairs],
    estimators: Sequence,
    config: BootstrapConfig,
    min_pairs: int = 10,
) -> MobilityReport:
    """Bootstrap every (dimension, cohort, group, estimator) cell."""
    if isinstance(ranked_by_dimension, Mapping):
        ranked_list = list(ranked_by_dimension.values())
    else:
        ranked_list = list(ranked_by_dimension)
    estimates = []
    failures = {}
    for ranked in ranked_list:
        for c in ranked.cohorts:
            res = bootstrap_cohort(ranked, c, estimators, config, min_pairs=min_pairs)
            for (g, e), v in res.items():
                if isinstance(v, Exception):
                    failures[(ranked.dimension, c, g, e)] = v
                else:
                    estimates.append(v)
    return MobilityReport(estimates, failures)
