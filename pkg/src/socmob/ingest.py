"""Survey ingestion: parse, validate, recode and link father-son pairs.

Input files are UTF-8 CSV with a header row. Source columns are mapped onto
the canonical names in ``CANONICAL_COLUMNS`` through an optional column map.
Rows that fail validation are never dropped silently; every rejection is
tallied by reason in an :class:`ExclusionReport`.
"""

from __future__ import annotations

import csv
import enum
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigError, DataValidationError

CANONICAL_COLUMNS = (
    "person_id",
    "household_id",
    "birth_year",
    "education_code",
    "occupation_code",
    "income_proxy",
    "sample_weight",
    "social_group",
    "is_household_head",
    "father_id",
    "father_birth_year",
    "father_education_code",
    "father_occupation_code",
    "sex",
)
REQUIRED_COLUMNS = ("person_id", "household_id", "birth_year", "sample_weight", "social_group")

PAIR_COLUMNS = (
    "son_id",
    "father_cohort",
    "son_cohort",
    "father_occ",
    "son_occ",
    "father_edu_years",
    "son_edu_years",
    "group",
    "weight",
    "son_birth_year",
    "father_birth_year",
)

BIRTH_YEAR_RANGE = (1900, 2000)


class Dataset(enum.Enum):
    NSS43 = "NSS43"
    IHDS2 = "IHDS2"

    @property
    def survey_year(self) -> int:
        return {"NSS43": 1988, "IHDS2": 2011}[self.value]

    @property
    def occupation_digits(self) -> int:
        return {"NSS43": 3, "IHDS2": 2}[self.value]

    @classmethod
    def parse(cls, text) -> "Dataset":
        if isinstance(text, cls):
            return text
        key = str(text).strip().upper().replace("-", "").replace("_", "")
        for d in cls:
            if d.value == key:
                return d
        raise ConfigError(f"unknown dataset {text!r}")


class SocialGroup(enum.Enum):
    BRAHMIN = "Brahmin"
    FC = "FC"
    OBC = "OBC"
    DALIT = "Dalit"
    ADIVASI = "Adivasi"
    MUSLIM = "Muslim"
    OTHER = "Other"

    @classmethod
    def parse(cls, text) -> "SocialGroup":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower()
        try:
            return _GROUP_ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown social group {text!r}") from None


_GROUP_ALIASES = {
    "brahmin": SocialGroup.BRAHMIN,
    "fc": SocialGroup.FC,
    "forward caste": SocialGroup.FC,
    "obc": SocialGroup.OBC,
    "dalit": SocialGroup.DALIT,
    "dalits": SocialGroup.DALIT,
    "sc": SocialGroup.DALIT,
    "dalit(sc)": SocialGroup.DALIT,
    "adivasi": SocialGroup.ADIVASI,
    "adivasis": SocialGroup.ADIVASI,
    "st": SocialGroup.ADIVASI,
    "adivasi(st)": SocialGroup.ADIVASI,
    "muslim": SocialGroup.MUSLIM,
    "muslims": SocialGroup.MUSLIM,
    "other": SocialGroup.OTHER,
    "others": SocialGroup.OTHER,
}

GROUP_ORDER = tuple(SocialGroup)


# --------------------------------------------------------------------------
# Lookup tables


@dataclass(frozen=True)
class CatalogueEntry:
    code: int
    one_digit: int
    description: str
    broad_group: int


class OccupationCatalogue:
    """Two-digit NCO-1968 codes with their 1-digit parent and broad group."""

    def __init__(self, entries: Mapping[int, CatalogueEntry]):
        self.entries = dict(entries)

    @classmethod
    def from_csv(cls, path=None, collapse_path=None) -> "OccupationCatalogue":
        collapse = {}
        for row in _read_table(collapse_path, "broad_groups.csv"):
            collapse[int(row["one_digit"])] = int(row["broad_group"])
        entries = {}
        for row in _read_table(path, "nco1968.csv"):
            code = int(row["code"])
            one = int(row["one_digit"])
            if one not in collapse:
                raise ConfigError(f"1-digit code {one} has no broad group")
            if code in entries:
                raise ConfigError(f"duplicate catalogue code {code}")
            entries[code] = CatalogueEntry(code, one, row["description"], collapse[one])
        return cls(entries)

    @classmethod
    def default(cls) -> "OccupationCatalogue":
        return cls.from_csv()

    def __contains__(self, code) -> bool:
        return code in self.entries

    def __len__(self):
        return len(self.entries)

    def one_digit(self, code: int) -> int:
        return self.entries[code].one_digit

    def broad_group(self, code: int) -> int:
        return self.entries[code].broad_group

    @property
    def broad_groups(self) -> list[int]:
        return sorted({e.broad_group for e in self.entries.values()})


class EducationTable:
    """Maps (dataset, source code) to completed years of schooling."""

    def __init__(self, mapping: Mapping[tuple[Dataset, int], int]):
        self.mapping = dict(mapping)

    @classmethod
    def from_csv(cls, path=None) -> "EducationTable":
        mapping = {}
        for row in _read_table(path, "education_codes.csv"):
            mapping[(Dataset.parse(row["dataset"]), int(row["code"]))] = int(row["years"])
        return cls(mapping)

    @classmethod
    def default(cls) -> "EducationTable":
        return cls.from_csv()

    def years(self, code: int, source: Dataset) -> int:
        try:
            return self.mapping[(source, code)]
        except KeyError:
            raise ValueError(f"unknown {source.value} education code {code}") from None


def _read_table(path, default_name):
    if path is None:
        text = resources.files("socmob.data").joinpath(default_name).read_text(encoding="utf-8")
        return list(csv.DictReader(text.splitlines()))
    try:
        with open(path, newline="", encoding="utf-8") as f:
            return list(csv.DictReader(f))
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read table ({exc.strerror})") from exc


_DEFAULT_EDUCATION: EducationTable | None = None
_DEFAULT_CATALOGUE: OccupationCatalogue | None = None


def default_education_table() -> EducationTable:
    global _DEFAULT_EDUCATION
    if _DEFAULT_EDUCATION is None:
        _DEFAULT_EDUCATION = EducationTable.default()
    return _DEFAULT_EDUCATION


def default_catalogue() -> OccupationCatalogue:
    global _DEFAULT_CATALOGUE
    if _DEFAULT_CATALOGUE is None:
        _DEFAULT_CATALOGUE = OccupationCatalogue.default()
    return _DEFAULT_CATALOGUE


def recode_education(source_code: int, source: Dataset, table: EducationTable | None = None) -> int:
    """Years of schooling for a dataset-specific education code.

    Raises ValueError for codes the table does not define.
    """
    table = table or default_education_table()
    return table.years(int(source_code), Dataset.parse(source))


def remap_occupation(code, catalogue: OccupationCatalogue | None = None, digits: int | None = None) -> int:
    """Reduce an NCO-1968 code to its 2-digit form.

    String input keeps leading zeros ("020" is a 3-digit code). For integers
    the width is inferred (>= 100 means 3 digits) unless ``digits`` says
    otherwise. Raises ValueError when the result is not in the catalogue.
    """
    catalogue = catalogue or default_catalogue()
    if isinstance(code, str):
        text = code.strip()
        if not text.isdigit():
            raise ValueError(f"non-numeric occupation code {code!r}")
        if digits is None:
            digits = 3 if len(text) >= 3 else 2
        value = int(text)
    else:
        value = int(code)
    if value < 0:
        raise ValueError(f"negative occupation code {code!r}")
    if digits is None:
        digits = 3 if value >= 100 else 2
    if digits == 3:
        if value > 999:
            raise ValueError(f"occupation code {code!r} has more than 3 digits")
        value //= 10
    elif digits != 2 or value > 99:
        raise ValueError(f"occupation code {code!r} is not a 2- or 3-digit code")
    if value not in catalogue:
        raise ValueError(f"occupation code {value:02d} not in catalogue")
    return value


# --------------------------------------------------------------------------
# Cohorts


@dataclass(frozen=True)
class Cohort:
    start: int
    end: int
    sei_source: Dataset

    @property
    def label(self) -> str:
        return f"{self.start}-{self.end % 100:02d}"

    def __contains__(self, year: int) -> bool:
        return self.start <= year <= self.end

    def __str__(self):
        return self.label


BASE_COHORT_STARTS = (1926, 1936, 1946, 1956, 1966, 1976)
BASE_SEI_SOURCES = (Dataset.NSS43,) * 4 + (Dataset.IHDS2,) * 2


@dataclass(frozen=True)
class CohortScheme:
    cohorts: tuple[Cohort, ...]
    shift_years: int = 0

    def __post_init__(self):
        if not self.cohorts:
            raise ConfigError("cohort scheme has no cohorts")
        for i, c in enumerate(self.cohorts):
            if c.end < c.start:
                raise ConfigError(f"cohort {c.label} ends before it starts")
            last = i == len(self.cohorts) - 1
            if c.end - c.start + 1 != 10 and not (last and self.shift_years):
                raise ConfigError(f"cohort {c.label} is not a 10-year span")
            if i and c.start != self.cohorts[i - 1].end + 1:
                raise ConfigError(f"cohorts {self.cohorts[i - 1].label} and {c.label} are not contiguous")

    @classmethod
    def base(cls) -> "CohortScheme":
        return cls.shifted(0)

    @classmethod
    def shifted(cls, years: int = 4) -> "CohortScheme":
        cohorts = tuple(
            Cohort(s + years, s + years + 9, src) for s, src in zip(BASE_COHORT_STARTS, BASE_SEI_SOURCES)
        )
        return cls(cohorts, shift_years=years)

    @classmethod
    def from_spec(cls, items: Iterable[Mapping], shift_years: int = 0) -> "CohortScheme":
        try:
            cohorts = tuple(
                Cohort(int(it["start"]), int(it["end"]), Dataset.parse(it["sei_source"])) for it in items
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid custom cohort entry: {exc}") from exc
        return cls(cohorts, shift_years=shift_years)

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.cohorts]

    def by_label(self, label: str) -> Cohort:
        for c in self.cohorts:
            if c.label == label:
                return c
        raise KeyError(label)

    def index(self, label: str) -> int:
        return self.labels.index(label)


def assign_cohort(birth_year: int, scheme: CohortScheme) -> str | None:
    """Label of the cohort containing ``birth_year``, or None."""
    for c in scheme.cohorts:
        if birth_year in c:
            return c.label
    return None


# --------------------------------------------------------------------------
# Records


@dataclass(frozen=True)
class FatherInfo:
    birth_year: int
    education_code: int
    education_years: int
    occupation_code: int
    person_id: str | None = None

    @property
    def coresident(self) -> bool:
        return self.person_id is not None


@dataclass(frozen=True, slots=True)
class IndividualRecord:
    person_id: str
    household_id: str
    birth_year: int
    education_code: int
    education_years: int
    occupation_code: int
    income_proxy: float | None
    sample_weight: float
    social_group: SocialGroup
    is_household_head: bool
    source: Dataset
    father_id: str | None = None
    inline_father: FatherInfo | None = None
    father_problem: str | None = None
    sex: str | None = None

    @property
    def age(self) -> int:
        return self.source.survey_year - self.birth_year

    @property
    def has_father_link(self) -> bool:
        return bool(self.father_id) or self.inline_father is not None or self.father_problem is not None

    def recoded(self, table: EducationTable | None = None, catalogue: OccupationCatalogue | None = None):
        """Re-derive education years and 2-digit occupation from the stored codes."""
        from dataclasses import replace

        return replace(
            self,
            education_years=recode_education(self.education_code, self.source, table),
            occupation_code=remap_occupation(self.occupation_code, catalogue),
        )


@dataclass(frozen=True)
class FatherSonPair:
    son: IndividualRecord
    father: FatherInfo
    son_cohort: str
    father_cohort: str
    household_weight: float

    @property
    def group(self) -> SocialGroup:
        return self.son.social_group

    @property
    def son_age(self) -> int:
        return self.son.age


@dataclass
class ExclusionReport:
    n_input: int = 0
    n_accepted: int = 0
    reasons: Counter = field(default_factory=Counter)

    def exclude(self, reason: str):
        self.reasons[reason] += 1

    @property
    def n_excluded(self) -> int:
        return sum(self.reasons.values())

    def to_dict(self) -> dict:
        return {
            "n_input": self.n_input,
            "n_accepted": self.n_accepted,
            "n_excluded": self.n_excluded,
            "reasons": dict(sorted(self.reasons.items())),
        }


@dataclass
class IngestResult:
    records: list[IndividualRecord]
    report: ExclusionReport
    source: Dataset
    path: str | None = None


def _blank(value) -> bool:
    return value is None or str(value).strip() == "" or str(value).strip().upper() in ("NA", "NAN", ".")


def _parse_int(value) -> int:
    text = str(value).strip()
    f = float(text)
    if f != int(f):
        raise ValueError(text)
    return int(f)


def _parse_bool(value) -> bool:
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "y", "t"):
        return True
    if text in ("", "0", "false", "no", "n", "f"):
        return False
    raise ValueError(value)


_MALE = {"m", "male", "1"}


def parse_rows(
    rows: Iterable[tuple[int, Mapping[str, str]]],
    source: Dataset,
    education: EducationTable | None = None,
    catalogue: OccupationCatalogue | None = None,
    where: str = "<rows>",
) -> IngestResult:
    """Validate canonical-keyed rows into records.

    ``rows`` yields (line number, row) pairs. Duplicate person ids raise
    DataValidationError naming the line; every other problem rejects the row
    under a named reason.
    """
    education = education or default_education_table()
    catalogue = catalogue or default_catalogue()
    digits = source.occupation_digits
    report = ExclusionReport()
    records: list[IndividualRecord] = []
    seen: dict[str, int] = {}

    for line, row in rows:
        report.n_input += 1
        pid = str(row.get("person_id") or "").strip()
        if not pid:
            report.exclude("missing-person-id")
            continue
        if pid in seen:
            raise DataValidationError(f"{where}:{line}: duplicate person_id {pid!r} (first at line {seen[pid]})")
        seen[pid] = line

        rec, reason = _parse_record(row, pid, source, education, catalogue, digits)
        if reason:
            report.exclude(reason)
            continue
        records.append(rec)
        report.n_accepted += 1

    return IngestResult(records, report, source, where)


def _parse_record(row, pid, source, education, catalogue, digits):
    try:
        birth_year = _parse_int(row.get("birth_year"))
    except (TypeError, ValueError):
        return None, "invalid-birth-year"
    if not BIRTH_YEAR_RANGE[0] <= birth_year <= BIRTH_YEAR_RANGE[1]:
        return None, "invalid-birth-year"
    try:
        weight = float(row.get("sample_weight"))
    except (TypeError, ValueError):
        return None, "invalid-weight"
    if not weight > 0 or weight == float("inf"):
        return None, "invalid-weight"
    income = row.get("income_proxy")
    if _blank(income):
        income = None
    else:
        try:
            income = float(income)
        except ValueError:
            return None, "invalid-income"
        if not income >= 0 or income == float("inf"):
            return None, "invalid-income"
    try:
        group = SocialGroup.parse(row.get("social_group"))
    except ValueError:
        return None, "unknown-social-group"
    if _blank(row.get("education_code")):
        return None, "missing-education"
    try:
        edu_code = _parse_int(row["education_code"])
        edu_years = education.years(edu_code, source)
    except ValueError:
        return None, "unknown-education-code"
    if _blank(row.get("occupation_code")):
        return None, "missing-occupation"
    try:
        occ = remap_occupation(str(row["occupation_code"]).strip(), catalogue, digits)
    except ValueError:
        return None, "unknown-occupation-code"
    try:
        head = _parse_bool(row.get("is_household_head") or "")
    except ValueError:
        return None, "invalid-head-flag"

    father_id = None if _blank(row.get("father_id")) else str(row["father_id"]).strip()
    inline, problem = None, None
    if father_id is None and not _blank(row.get("father_birth_year")):
        inline, problem = _parse_inline_father(row, source, education, catalogue, digits)
    sex = None if _blank(row.get("sex")) else str(row["sex"]).strip()

    rec = IndividualRecord(
        person_id=pid,
        household_id=str(row.get("household_id") or "").strip(),
        birth_year=birth_year,
        education_code=edu_code,
        education_years=edu_years,
        occupation_code=occ,
        income_proxy=income,
        sample_weight=weight,
        social_group=group,
        is_household_head=head,
        source=source,
        father_id=father_id,
        inline_father=inline,
        father_problem=problem,
        sex=sex,
    )
    return rec, None


def _parse_inline_father(row, source, education, catalogue, digits):
    try:
        by = _parse_int(row["father_birth_year"])
    except (TypeError, ValueError):
        return None, "father-invalid-birth-year"
    if not BIRTH_YEAR_RANGE[0] <= by <= BIRTH_YEAR_RANGE[1]:
        return None, "father-invalid-birth-year"
    try:
        ec = _parse_int(row.get("father_education_code"))
        ey = education.years(ec, source)
    except (TypeError, ValueError):
        return None, "father-unknown-education-code"
    try:
        occ = remap_occupation(str(row.get("father_occupation_code") or "").strip(), catalogue, digits)
    except ValueError:
        return None, "father-unknown-occupation-code"
    return FatherInfo(by, ec, ey, occ), None


def read_records(
    path,
    source,
    columns: Mapping[str, str] | None = None,
    education: EducationTable | None = None,
    catalogue: OccupationCatalogue | None = None,
) -> IngestResult:
    """Read one survey extract.

    Leading lines starting with "#" are skipped. ``columns`` maps canonical names to the file's header names; canonical
    names not listed are looked up under their own name.
    """
    source = Dataset.parse(source)
    path = Path(path)
    columns = dict(columns or {})
    unknown = set(columns) - set(CANONICAL_COLUMNS)
    if unknown:
        raise ConfigError(f"column map names unknown fields: {sorted(unknown)}")
    try:
        f = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot open input ({exc.strerror})") from exc
    with f:
        skipped = 0
        first = f.readline()
        while first.startswith("#"):
            skipped += 1
            first = f.readline()
        reader = csv.DictReader(_chain_first(first, f))
        header = reader.fieldnames or []
        lookup = {name: columns.get(name, name) for name in CANONICAL_COLUMNS}
        missing = [name for name in REQUIRED_COLUMNS if lookup[name] not in header]
        if missing:
            raise DataValidationError(
                f"{path}:{skipped + 1}: missing required columns {[lookup[m] for m in missing]}"
            )
        present = {name: src for name, src in lookup.items() if src in header}

        def rows():
            for row in reader:
                yield reader.line_num + skipped, {name: row[src] for name, src in present.items()}

        return parse_rows(rows(), source, education, catalogue, where=str(path))


def _chain_first(first, rest):
    yield first
    yield from rest


# --------------------------------------------------------------------------
# Pair linkage


@dataclass
class PairSet:
    pairs: list[FatherSonPair]
    report: ExclusionReport
    scheme: CohortScheme

    def crosstab(self) -> "CrossTab":
        return cross_tabulate(self.pairs, self.scheme)


def build_pairs(
    records: Iterable[IndividualRecord],
    scheme: CohortScheme,
    son_age: tuple[int, int] | None = (25, 65),
) -> PairSet:
    """Link sons to fathers and resolve both cohorts.

    Candidates are records carrying any father linkage; every candidate ends
    up either as a pair or under exactly one exclusion reason.
    """
    records = list(records)
    by_id = {r.person_id: r for r in records}
    report = ExclusionReport()
    pairs = []
    for son in records:
        if not son.has_father_link:
            continue
        report.n_input += 1
        reason, father = _resolve_father(son, by_id)
        if reason is None:
            reason = _pair_problem(son, father, scheme, son_age)
        if reason:
            report.exclude(reason)
            continue
        pairs.append(
            FatherSonPair(
                son=son,
                father=father,
                son_cohort=assign_cohort(son.birth_year, scheme),
                father_cohort=assign_cohort(father.birth_year, scheme),
                household_weight=son.sample_weight,
            )
        )
        report.n_accepted += 1
    return PairSet(pairs, report, scheme)


def _resolve_father(son, by_id):
    if son.sex is not None and son.sex.lower() not in _MALE:
        return "not-male", None
    if son.father_id:
        f = by_id.get(son.father_id)
        if f is None:
            return "father-not-found", None
        if f.person_id == son.person_id:
            return "father-is-self", None
        return None, FatherInfo(f.birth_year, f.education_code, f.education_years, f.occupation_code, f.person_id)
    if son.father_problem:
        return son.father_problem, None
    return None, son.inline_father


def _pair_problem(son, father, scheme, son_age):
    if father.birth_year >= son.birth_year:
        return "father-not-older"
    if son_age is not None and not son_age[0] <= son.age <= son_age[1]:
        return "son-age-out-of-window"
    if assign_cohort(son.birth_year, scheme) is None:
        return "son-cohort-unresolved"
    if assign_cohort(father.birth_year, scheme) is None:
        return "father-cohort-unresolved"
    return None


@dataclass
class CrossTab:
    son_cohorts: list[str]
    father_cohorts: list[str]
    counts: dict[tuple[str, str], int]

    def row_total(self, son_cohort: str) -> int:
        return sum(self.counts.get((son_cohort, f), 0) for f in self.father_cohorts)

    def column_total(self, father_cohort: str) -> int:
        return sum(self.counts.get((s, father_cohort), 0) for s in self.son_cohorts)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def rows(self) -> list[list]:
        """Table rows: header, one row per son cohort, then column totals."""
        out = [["SC/FC", *self.father_cohorts, "Row Total"]]
        for s in self.son_cohorts:
            out.append([s, *(self.counts.get((s, f), 0) for f in self.father_cohorts), self.row_total(s)])
        out.append(["Column Total", *(self.column_total(f) for f in self.father_cohorts), self.total])
        return out


def cross_tabulate(pairs: Iterable[FatherSonPair], scheme: CohortScheme) -> CrossTab:
    counts = Counter((p.son_cohort, p.father_cohort) for p in pairs)
    sons = [c for c in scheme.labels if any(k[0] == c for k in counts)]
    fathers = [c for c in scheme.labels if any(k[1] == c for k in counts)]
    return CrossTab(sons, fathers, dict(counts))


def pair_rows(pairs: Iterable[FatherSonPair]) -> list[list]:
    rows = []
    for p in pairs:
        rows.append(
            [
                p.son.person_id,
                p.father_cohort,
                p.son_cohort,
                p.father.occupation_code,
                p.son.occupation_code,
                p.father.education_years,
                p.son.education_years,
                p.group.value,
                repr(float(p.household_weight)),
                p.son.birth_year,
                p.father.birth_year,
            ]
        )
    return rows


def write_pairs(pairs: Iterable[FatherSonPair], f, header_line: str | None = None):
    if header_line:
        f.write(header_line + "\n")
    w = csv.writer(f, lineterminator="\n")
    w.writerow(PAIR_COLUMNS)
    w.writerows(pair_rows(pairs))


def read_pairs(path, survey_year: int = Dataset.IHDS2.survey_year) -> list[FatherSonPair]:
    """Load a canonical pair file back into pair objects.

    Only the fields the pair file carries are populated: income is None and
    the education code fields hold years of schooling.
    """
    pairs = []
    with open(path, newline="", encoding="utf-8") as f:
        lines = (ln for ln in f if not ln.startswith("#"))
        for row in csv.DictReader(lines):
            son_by = int(row["son_birth_year"])
            son = IndividualRecord(
                person_id=row["son_id"],
                household_id="",
                birth_year=son_by,
                education_code=int(row["son_edu_years"]),
                education_years=int(row["son_edu_years"]),
                occupation_code=int(row["son_occ"]),
                income_proxy=None,
                sample_weight=float(row["weight"]),
                social_group=SocialGroup.parse(row["group"]),
                is_household_head=False,
                source=Dataset.IHDS2 if survey_year == 2011 else Dataset.NSS43,
            )
            fy = int(row["father_edu_years"])
            father = FatherInfo(int(row["father_birth_year"]), fy, fy, int(row["father_occ"]))
            pairs.append(FatherSonPair(son, father, row["son_cohort"], row["father_cohort"], float(row["weight"])))
    return pairs
