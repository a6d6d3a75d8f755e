"""Synthetic surveys with planted rank-rank mobility.

The generator works in rank space. Each household draws a group and a father
rank; the son's latent rank follows the group's planted line
``intercept + slope * father_rank`` plus noise. Both ranks are mapped onto
an occupation ladder, and education/income are drawn around the rung means
so that the SEI model can recover the ladder order.

Two noise models are available:

``mixture`` (default)
    With probability ``slope`` the son keeps the father's rank, otherwise he
    draws from a uniform window centred on ``intercept / (1 - slope)``. The
    conditional mean is exactly the planted line and ranks never leave
    (0, 100), so no truncation is needed.
``normal``
    Gaussian noise with ``noise_sd``; draws outside (0, 100) are redrawn,
    which bends the conditional mean near the edges.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm

from .errors import ConfigError
from .ingest import CANONICAL_COLUMNS, CohortScheme, Dataset, SocialGroup, default_education_table
from .stats import weighted_percentile_ranks

IHDS_FILE = "ihds2.csv"
NSS_FILE = "nss43.csv"


@dataclass(frozen=True)
class GroupSpec:
    group: SocialGroup
    share: float
    slope: float
    intercept: float


@dataclass(frozen=True)
class Rung:
    code: int
    status: float
    edu_mean: float
    inc_mean: float
    edu_sd: float = 2.0
    inc_sd: float = 0.0
    share: float | None = None


def default_ladder() -> list[Rung]:
    codes = [63, 99, 53, 95, 61, 75, 43, 81, 79, 98, 72, 40, 57, 85, 35, 15, 30, 12, 21, 2]
    k = len(codes)
    rungs = []
    for i, code in enumerate(codes):
        inc = round(1000.0 * float(np.exp(0.12 * i)), 2)
        rungs.append(Rung(code, float(i + 1), round(0.5 + 15.5 * i / (k - 1), 3), inc, 2.5, round(0.35 * inc, 2)))
    return rungs


@dataclass(frozen=True)
class SynthSpec:
    n_households: int
    groups: tuple[GroupSpec, ...] = (GroupSpec(SocialGroup.OTHER, 1.0, 0.6, 20.0),)
    ladder: tuple[Rung, ...] = field(default_factory=lambda: tuple(default_ladder()))
    scheme: CohortScheme = field(default_factory=CohortScheme.base)
    seed: int = 0
    son_cohorts: int = 4
    father_gap: tuple[int, int] = (20, 30)
    coresident_share: float = 0.5
    n_nss_heads: int | None = None
    noise: str = "mixture"
    noise_sd: float = 0.0
    weights: str = "uniform"

    def __post_init__(self):
        if self.n_households < 1:
            raise ConfigError("n_households must be positive")
        if not self.groups:
            raise ConfigError("at least one group is required")
        if abs(sum(g.share for g in self.groups) - 1.0) > 1e-9:
            raise ConfigError("group shares must sum to 1")
        if any(g.share < 0 for g in self.groups):
            raise ConfigError("group shares must be non-negative")
        if len(self.ladder) < 2:
            raise ConfigError("the ladder needs at least 2 rungs")
        if any(r.edu_sd < 0 or r.inc_sd < 0 for r in self.ladder):
            raise ConfigError("noise sds must be non-negative")
        statuses = [r.status for r in self.ladder]
        if statuses != sorted(statuses) or len(set(statuses)) != len(statuses):
            raise ConfigError("ladder rungs must be listed in strictly increasing status")
        if self.noise not in ("mixture", "normal"):
            raise ConfigError(f"unknown noise model {self.noise!r}")
        if self.weights not in ("uniform", "informative"):
            raise ConfigError(f"unknown weight scheme {self.weights!r}")
        if not 1 <= self.son_cohorts <= len(self.scheme.cohorts) - 1:
            raise ConfigError("son_cohorts must leave at least one older cohort for fathers")
        for g in self.groups:
            if self.noise == "mixture":
                _mixture_window(g)
            elif self.noise_sd == 0 and not 0 < g.intercept + g.slope * 50 < 100:
                raise ConfigError(f"{g.group.value}: planted line leaves (0, 100)")

    @property
    def rung_shares(self) -> np.ndarray:
        shares = np.array([r.share if r.share is not None else 1.0 for r in self.ladder], dtype=float)
        return shares / shares.sum()

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthSpec":
        d = dict(d)
        try:
            if "groups" in d:
                d["groups"] = tuple(
                    GroupSpec(SocialGroup.parse(g["group"]), float(g["share"]), float(g["slope"]), float(g["intercept"]))
                    for g in d["groups"]
                )
            if "ladder" in d:
                d["ladder"] = tuple(Rung(**r) for r in d["ladder"])
            scheme = d.get("scheme", "base")
            if isinstance(scheme, str):
                d["scheme"] = {"base": CohortScheme.base(), "shifted": CohortScheme.shifted(4)}[scheme]
            elif isinstance(scheme, Mapping):
                d["scheme"] = CohortScheme.from_spec(scheme["cohorts"], int(scheme.get("shift_years", 0)))
            if "father_gap" in d:
                d["father_gap"] = tuple(int(x) for x in d["father_gap"])
            return cls(**d)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synth spec: {exc}") from exc


def _mixture_window(g: GroupSpec) -> tuple[float, float]:
    if not 0 <= g.slope <= 1:
        raise ConfigError(f"{g.group.value}: mixture noise needs 0 <= slope <= 1")
    if g.slope == 1:
        if g.intercept != 0:
            raise ConfigError(f"{g.group.value}: slope 1 requires intercept 0")
        return 0.0, 100.0
    centre = g.intercept / (1 - g.slope)
    if not 0 < centre < 100:
        raise ConfigError(f"{g.group.value}: intercept/(1-slope) must lie in (0, 100)")
    half = min(centre, 100 - centre)
    return centre - half, centre + half


def son_latent_ranks(rng, father_rank, g: GroupSpec, spec: SynthSpec) -> np.ndarray:
    n = len(father_rank)
    if spec.noise == "mixture":
        lo, hi = _mixture_window(g)
        keep = rng.uniform(size=n) < g.slope
        other = rng.uniform(lo, hi, size=n)
        return np.where(keep, father_rank, other)
    mean = g.intercept + g.slope * father_rank
    if spec.noise_sd == 0:
        return mean.copy()
    out = mean + rng.normal(0, spec.noise_sd, size=n)
    bad = (out <= 0) | (out >= 100)
    for _ in range(1000):
        if not bad.any():
            return out
        out[bad] = mean[bad] + rng.normal(0, spec.noise_sd, size=int(bad.sum()))
        bad = (out <= 0) | (out >= 100)
    raise ConfigError(f"{g.group.value}: planted line too far outside (0, 100) for truncation")


def rung_of(rank, shares) -> np.ndarray:
    edges = 100.0 * np.cumsum(shares)[:-1]
    return np.searchsorted(edges, rank, side="right")


def _father_draws(rng, n, spec):
    """Father ranks and household weights."""
    if spec.weights == "uniform":
        return rng.uniform(0, 100, n), np.ones(n)
    # informative: households with low-rank fathers are under-sampled
    out = []
    while sum(len(o) for o in out) < n:
        f = rng.uniform(0, 100, 2 * n)
        p = 0.25 + 0.75 * f / 100.0
        out.append(f[rng.uniform(size=len(f)) < p])
    f = np.concatenate(out)[:n]
    return f, 1.0 / (0.25 + 0.75 * f / 100.0)


def _draw_latent(rng, spec: SynthSpec, n: int):
    shares = np.array([g.share for g in spec.groups])
    gi = rng.choice(len(spec.groups), size=n, p=shares)
    f, w = _father_draws(rng, n, spec)
    s = np.empty(n)
    for k, g in enumerate(spec.groups):
        m = gi == k
        s[m] = son_latent_ranks(rng, f[m], g, spec)
    return gi, f, s, w


def _nss_code_for_years(years):
    table = default_education_table()
    codes = sorted(c for (d, c) in table.mapping if d is Dataset.NSS43)
    by_years = {}
    for c in codes:
        by_years.setdefault(table.mapping[(Dataset.NSS43, c)], c)
    levels = np.array(sorted(by_years))
    pick = np.abs(np.asarray(years)[:, None] - levels[None, :]).argmin(axis=1)
    return np.array([by_years[levels[i]] for i in pick])


def generate(spec: SynthSpec, out_dir) -> dict[str, Path]:
    """Write the IHDS2-style pair file and NSS43-style head file.

    Returns paths keyed by dataset name. Output is a pure function of the
    spec, seed included.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    ladder = spec.ladder
    shares = spec.rung_shares
    codes = np.array([r.code for r in ladder])
    edu_mean = np.array([r.edu_mean for r in ladder])
    edu_sd = np.array([r.edu_sd for r in ladder])
    inc_mean = np.array([r.inc_mean for r in ladder])
    inc_sd = np.array([r.inc_sd for r in ladder])

    n = spec.n_households
    gi, f, s, w = _draw_latent(rng, spec, n)
    f_rung = rung_of(f, shares)
    s_rung = rung_of(s, shares)

    son_cohorts = spec.scheme.cohorts[-spec.son_cohorts :]
    son_by = rng.integers(son_cohorts[0].start, son_cohorts[-1].end + 1, size=n)
    father_by = son_by - rng.integers(spec.father_gap[0], spec.father_gap[1] + 1, size=n)
    coresident = rng.uniform(size=n) < spec.coresident_share

    def edu_years(rung):
        return np.clip(np.rint(rng.normal(edu_mean[rung], edu_sd[rung])), 0, 17).astype(int)

    def income(rung):
        return np.maximum(0.0, rng.normal(inc_mean[rung], inc_sd[rung]))

    f_edu = edu_years(f_rung)
    s_edu = edu_years(s_rung)
    head_rung = np.where(coresident, f_rung, s_rung)
    hh_income = income(head_rung)

    ihds_path = out_dir / IHDS_FILE
    with open(ihds_path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CANONICAL_COLUMNS[:-1])
        for i in range(n):
            grp = spec.groups[gi[i]].group.value
            hid = f"H{i:07d}"
            weight = f"{w[i]:.6f}"
            inc = f"{hh_income[i]:.2f}"
            son_occ = f"{codes[s_rung[i]]:02d}"
            fa_occ = f"{codes[f_rung[i]]:02d}"
            if coresident[i]:
                wr.writerow([f"F{i:07d}", hid, father_by[i], f_edu[i], fa_occ, inc, weight, grp, 1, "", "", "", ""])
                wr.writerow([f"S{i:07d}", hid, son_by[i], s_edu[i], son_occ, inc, weight, grp, 0, f"F{i:07d}", "", "", ""])
            else:
                wr.writerow(
                    [f"S{i:07d}", hid, son_by[i], s_edu[i], son_occ, inc, weight, grp, 1, "", father_by[i], f_edu[i], fa_occ]
                )

    nss_cohorts = [c for c in spec.scheme.cohorts if c.sei_source is Dataset.NSS43]
    n_nss = spec.n_nss_heads if spec.n_nss_heads is not None else max(2000, n // 2)
    nss_path = out_dir / NSS_FILE
    if nss_cohorts:
        by = rng.integers(nss_cohorts[0].start, nss_cohorts[-1].end + 1, size=n_nss)
        rung = rung_of(rng.uniform(0, 100, n_nss), shares)
        nss_edu = _nss_code_for_years(edu_years(rung))
        nss_inc = income(rung)
        digit = rng.integers(0, 10, size=n_nss)
        ngi = rng.choice(len(spec.groups), size=n_nss, p=[g.share for g in spec.groups])
    with open(nss_path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CANONICAL_COLUMNS[:-1])
        if nss_cohorts:
            for i in range(n_nss):
                wr.writerow(
                    [
                        f"N{i:07d}",
                        f"NH{i:07d}",
                        by[i],
                        nss_edu[i],
                        f"{codes[rung[i]]:02d}{digit[i]}",
                        f"{nss_inc[i]:.2f}",
                        "1.000000",
                        spec.groups[ngi[i]].group.value,
                        1,
                        "",
                        "",
                        "",
                        "",
                    ]
                )
    return {Dataset.IHDS2.value: ihds_path, Dataset.NSS43.value: nss_path}


def ladder_sample(spec: SynthSpec, n: int | None = None, seed: int | None = None):
    """Rank-space draw without writing files.

    Returns (groups, father_rung, son_rung, weights); rung indices are a
    strictly increasing stand-in for any status score.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    gi, f, s, w = _draw_latent(rng, spec, spec.n_households if n is None else n)
    shares = spec.rung_shares
    groups = [spec.groups[k].group for k in gi]
    return groups, rung_of(f, shares), rung_of(s, shares), w


def truncation_probability(g: GroupSpec, spec: SynthSpec) -> float:
    """Share of first draws that land outside (0, 100) under the planted line."""
    if spec.noise == "mixture":
        return 0.0
    f = np.linspace(0.0, 100.0, 2001)
    mean = g.intercept + g.slope * f
    if spec.noise_sd == 0:
        return float(np.mean((mean <= 0) | (mean >= 100)))
    p = norm.cdf(-mean / spec.noise_sd) + norm.sf((100 - mean) / spec.noise_sd)
    return float(trapezoid(p, f) / 100.0)


def oracle_estimates(
    spec: SynthSpec,
    method: str = "auto",
    draws: int = 1_000_000,
    seed: int = 12345,
) -> dict[SocialGroup, tuple[float, float]]:
    """Expected (p25, p75) per group under the planted model.

    ``analytic`` plugs 25 and 75 into the planted line. It is exact only
    when pooled son ranks stay uniform, i.e. every line passes through
    (50, 50) and nothing is truncated. ``monte_carlo`` simulates ``draws``
    households, re-ranks sons and fathers on the pooled weighted ladder
    positions and fits the group rank-rank line. ``auto`` uses Monte Carlo
    when any group's truncation probability exceeds 1% or any line misses
    (50, 50).
    """
    if method == "auto":
        heavy = any(truncation_probability(g, spec) > 0.01 for g in spec.groups)
        off_centre = any(abs(g.intercept + 50 * g.slope - 50) > 1e-9 for g in spec.groups)
        method = "monte_carlo" if heavy or off_centre else "analytic"
    if method == "analytic":
        return {g.group: (g.intercept + 25 * g.slope, g.intercept + 75 * g.slope) for g in spec.groups}
    if method != "monte_carlo":
        raise ValueError(f"unknown oracle method {method!r}")

    rng = np.random.default_rng(seed)
    gi, f, s, w = _draw_latent(rng, spec, draws)
    shares = spec.rung_shares
    x = weighted_percentile_ranks(rung_of(f, shares), w)
    y = weighted_percentile_ranks(rung_of(s, shares), w)
    out = {}
    for k, g in enumerate(spec.groups):
        m = gi == k
        wm = w[m]
        mx = np.dot(wm, x[m]) / wm.sum()
        my = np.dot(wm, y[m]) / wm.sum()
        slope = np.dot(wm, (x[m] - mx) * (y[m] - my)) / np.dot(wm, (x[m] - mx) ** 2)
        out[g.group] = (float(my + slope * (25 - mx)), float(my + slope * (75 - mx)))
    return out
