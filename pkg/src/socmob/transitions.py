"""Weighted father-to-son occupation transition matrices over broad groups."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .ingest import FatherSonPair, OccupationCatalogue, SocialGroup, default_catalogue

ALL = "ALL"


@dataclass
class TransitionTally:
    """Mergeable weighted and unweighted father-group x son-group counts."""

    groups: tuple[int, ...]
    weighted: np.ndarray
    counts: np.ndarray

    @classmethod
    def empty(cls, groups: Iterable[int]) -> "TransitionTally":
        groups = tuple(groups)
        k = len(groups)
        return cls(groups, np.zeros((k, k)), np.zeros((k, k), dtype=np.int64))

    def add(self, father_group: int, son_group: int, weight: float):
        i = self.groups.index(father_group)
        j = self.groups.index(son_group)
        self.weighted[i, j] += weight
        self.counts[i, j] += 1

    def merge(self, other: "TransitionTally") -> "TransitionTally":
        if other.groups != self.groups:
            raise ValueError("cannot merge tallies over different group sets")
        return TransitionTally(self.groups, self.weighted + other.weighted, self.counts + other.counts)


@dataclass(frozen=True)
class TransitionMatrix:
    group: str
    groups: tuple[int, ...]
    rows: np.ndarray
    row_counts: np.ndarray

    @property
    def empty_rows(self) -> list[int]:
        return [g for g, n in zip(self.groups, self.row_counts) if n == 0]

    @classmethod
    def from_tally(cls, tally: TransitionTally, group: str = ALL) -> "TransitionMatrix":
        totals = tally.weighted.sum(axis=1)
        rows = np.zeros_like(tally.weighted)
        nz = totals > 0
        rows[nz] = tally.weighted[nz] / totals[nz, None]
        return cls(group, tally.groups, rows, tally.counts.sum(axis=1))


def tally_pairs(
    pairs: Iterable[FatherSonPair],
    catalogue: OccupationCatalogue | None = None,
) -> TransitionTally:
    catalogue = catalogue or default_catalogue()
    tally = TransitionTally.empty(catalogue.broad_groups)
    for p in pairs:
        tally.add(
            catalogue.broad_group(p.father.occupation_code),
            catalogue.broad_group(p.son.occupation_code),
            p.household_weight,
        )
    return tally


def transition_matrix(
    pairs: Iterable[FatherSonPair],
    catalogue: OccupationCatalogue | None = None,
    group=None,
    son_age: tuple[int, int] | None = (25, 55),
) -> TransitionMatrix:
    """Row-stochastic matrix of son broad group given father broad group.

    ``group`` restricts to one social group (None means all). Sons outside
    the ``son_age`` window at survey time are left out. Rows with no pairs
    stay all-zero and are listed in ``empty_rows``.
    """
    g = None if group in (None, ALL) else SocialGroup.parse(group)
    selected = [
        p
        for p in pairs
        if (g is None or p.group is g) and (son_age is None or son_age[0] <= p.son_age <= son_age[1])
    ]
    return TransitionMatrix.from_tally(tally_pairs(selected, catalogue), ALL if g is None else g.value)


def render_matrix(m: TransitionMatrix) -> str:
    """Fixed-width text table: 2-decimal probabilities and an n* column."""
    width = 6
    head = " " * 4 + "".join(f"{g:>{width}}" for g in m.groups) + f"{'n*':>{width + 2}}"
    lines = [f"STM {m.group}", head]
    for i, g in enumerate(m.groups):
        if m.row_counts[i] == 0:
            cells = "".join(f"{'-':>{width}}" for _ in m.groups)
        else:
            cells = "".join(f"{v:>{width}.2f}" for v in m.rows[i])
        lines.append(f"{g:>3} " + cells + f"{int(m.row_counts[i]):>{width + 2}}")
    return "\n".join(lines) + "\n"


def matrix_rows(m: TransitionMatrix) -> list[list]:
    """CSV rows: father group, probabilities at full precision, n*."""
    out = [["father_group", *[str(g) for g in m.groups], "n_star"]]
    for i, g in enumerate(m.groups):
        out.append([g, *[repr(float(v)) for v in m.rows[i]], int(m.row_counts[i])])
    return out
