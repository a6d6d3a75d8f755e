import csv
import io

import pytest

from socmob.ingest import CANONICAL_COLUMNS, Dataset, FatherInfo, IndividualRecord, SocialGroup

ACCEPTANCE_LINES: list[str] = []


def make_record(pid, birth_year, occ=61, edu=5, group="Other", weight=1.0, head=False,
                father_id=None, inline_father=None, income=1000.0, source=Dataset.IHDS2, sex=None):
    return IndividualRecord(
        person_id=str(pid),
        household_id="h" + str(pid),
        birth_year=birth_year,
        education_code=edu,
        education_years=edu,
        occupation_code=occ,
        income_proxy=income,
        sample_weight=weight,
        social_group=SocialGroup.parse(group),
        is_household_head=head,
        source=source,
        father_id=father_id,
        inline_father=inline_father,
        sex=sex,
    )


def make_father(birth_year, occ=61, edu=3):
    return FatherInfo(birth_year, edu, edu, occ)


def csv_text(rows, columns=CANONICAL_COLUMNS):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r.get(c, "") for c in columns})
    return buf.getvalue()


@pytest.fixture
def write_csv(tmp_path):
    def _write(name, rows, columns=CANONICAL_COLUMNS, prefix=""):
        p = tmp_path / name
        p.write_text(prefix + csv_text(rows, columns))
        return p

    return _write


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
