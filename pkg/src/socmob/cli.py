"""Command-line front end: ``socmob {ingest,sei,mobility,transitions,synth,pipeline}``.

Runs are driven by one YAML config file; command-line flags override the
matching config keys. Exit codes: 0 success, 2 config error, 3 data
validation error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import __version__
from .errors import ConfigError, DataValidationError, NumericalError, SocmobError
from .ingest import (
    CohortScheme,
    Dataset,
    EducationTable,
    OccupationCatalogue,
    SocialGroup,
    build_pairs,
    pair_rows,
    PAIR_COLUMNS,
    read_records,
)
from .mobility import BootstrapConfig, Dimension, Estimator, mobility_report, rank_pairs
from .sei import SeiConfig, average_across_cohorts, cohort_stability, estimate_cohort_tables
from .synth import SynthSpec, generate
from .transitions import ALL, matrix_rows, render_matrix, transition_matrix

log = logging.getLogger("socmob")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

TOP_KEYS = {"seed", "out", "scheme", "cohorts", "inputs", "tables", "pairs", "sei", "mobility", "transitions"}


# --------------------------------------------------------------------------
# Config


def _key_lines(text: str) -> dict[tuple, int]:
    """1-based line of every mapping key, addressed by its key path."""
    lines: dict[tuple, int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                lines[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                lines[path + (i,)] = v.start_mark.line + 1
                walk(v, path + (i,))

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return lines


class _Loc:
    def __init__(self, path: Path, lines: Mapping[tuple, int]):
        self.path = path
        self.lines = lines

    def error(self, keys: tuple, message: str) -> ConfigError:
        for i in range(len(keys), 0, -1):
            if keys[:i] in self.lines:
                return ConfigError(f"{self.path}:{self.lines[keys[:i]]}: {message}")
        return ConfigError(f"{self.path}: {message}")


def load_yaml(path) -> tuple[dict, _Loc]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        data = yaml.safe_load(text) or {}
        lines = _key_lines(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ConfigError(f"{where}: invalid YAML ({getattr(exc, 'problem', exc)})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: config must be a mapping")
    return data, _Loc(path, lines)


@dataclass(frozen=True)
class InputSpec:
    path: Path
    columns: dict[str, str] = field(default_factory=dict)


@dataclass
class RunConfig:
    raw: dict
    seed: int
    out: Path
    scheme: CohortScheme
    inputs: dict[Dataset, InputSpec]
    education: EducationTable
    catalogue: OccupationCatalogue
    pair_source: Dataset
    pair_son_age: tuple[int, int] | None
    sei: SeiConfig
    dimensions: list[Dimension]
    estimators: list[Estimator]
    min_pairs: int
    bootstrap: BootstrapConfig
    transition_son_age: tuple[int, int] | None
    transition_groups: list[str]

    @cached_property
    def config_hash(self) -> str:
        # the output location is not an analysis input
        hashed = {k: v for k, v in self.raw.items() if k != "out"}
        blob = json.dumps(hashed, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def provenance(self) -> str:
        return provenance_line(self.config_hash, self.seed)


def provenance_line(config_hash: str, seed) -> str:
    return f"# socmob {__version__} config_sha256={config_hash} seed={seed}"


def _age_window(value, loc, keys):
    if value is None:
        return None
    try:
        lo, hi = (int(v) for v in value)
    except (TypeError, ValueError):
        raise loc.error(keys, "age window must be a [min, max] pair") from None
    if lo > hi:
        raise loc.error(keys, "age window minimum exceeds maximum")
    return lo, hi


def load_config(path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Parse and validate a run config; ``overrides`` replace top-level keys."""
    path = Path(path)
    data, loc = load_yaml(path)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    unknown = set(data) - TOP_KEYS
    if unknown:
        k = sorted(unknown)[0]
        raise loc.error((k,), f"unknown config key {k!r}")
    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    try:
        seed = int(data.get("seed", 0))
    except (TypeError, ValueError):
        raise loc.error(("seed",), "seed must be an integer") from None
    out = resolve(data.get("out", "out"))

    scheme_name = data.get("scheme", "base")
    if scheme_name == "base":
        scheme = CohortScheme.base()
    elif scheme_name == "shifted":
        scheme = CohortScheme.shifted(4)
    elif scheme_name == "custom":
        if "cohorts" not in data:
            raise loc.error(("scheme",), "custom scheme needs a 'cohorts' list")
        try:
            scheme = CohortScheme.from_spec(data["cohorts"])
        except ConfigError as exc:
            raise loc.error(("cohorts",), str(exc)) from None
    else:
        raise loc.error(("scheme",), f"scheme must be base, shifted or custom, not {scheme_name!r}")

    inputs = {}
    for name, spec in (data.get("inputs") or {}).items():
        try:
            ds = Dataset.parse(name)
        except ConfigError:
            raise loc.error(("inputs", name), f"unknown dataset {name!r}") from None
        if isinstance(spec, str):
            spec = {"path": spec}
        if not isinstance(spec, Mapping) or "path" not in spec:
            raise loc.error(("inputs", name), "input needs a 'path'")
        p = resolve(spec["path"])
        if not p.is_file():
            raise loc.error(("inputs", name, "path"), f"input file not found: {p}")
        inputs[ds] = InputSpec(p, dict(spec.get("columns") or {}))
    if not inputs:
        raise loc.error(("inputs",), "no input files configured")

    tables = data.get("tables") or {}
    for key in tables:
        if key not in ("education", "catalogue", "broad_groups"):
            raise loc.error(("tables", key), f"unknown table {key!r}")
        if not resolve(tables[key]).is_file():
            raise loc.error(("tables", key), f"table file not found: {resolve(tables[key])}")
    education = EducationTable.from_csv(resolve(tables["education"]) if "education" in tables else None)
    catalogue = OccupationCatalogue.from_csv(
        resolve(tables["catalogue"]) if "catalogue" in tables else None,
        resolve(tables["broad_groups"]) if "broad_groups" in tables else None,
    )

    pairs = data.get("pairs") or {}
    try:
        pair_source = Dataset.parse(pairs.get("source", "IHDS2"))
    except ConfigError:
        raise loc.error(("pairs", "source"), "unknown pair source dataset") from None
    if pair_source not in inputs:
        raise loc.error(("pairs", "source"), f"pair source {pair_source.value} has no input file")
    pair_son_age = _age_window(pairs.get("son_age", [25, 65]), loc, ("pairs", "son_age"))

    try:
        sei = SeiConfig.from_dict(data.get("sei"))
    except (TypeError, ValueError) as exc:
        raise loc.error(("sei",), str(exc)) from None

    mob = data.get("mobility") or {}
    try:
        dimensions = [Dimension.parse(d) for d in mob.get("dimensions", ["occupation", "occupation-constant", "education"])]
    except ValueError as exc:
        raise loc.error(("mobility", "dimensions"), str(exc)) from None
    try:
        estimators = [Estimator.parse(e) for e in mob.get("estimators", [e.value for e in Estimator])]
    except ValueError as exc:
        raise loc.error(("mobility", "estimators"), str(exc)) from None
    boot = dict(mob.get("bootstrap") or {})
    try:
        bootstrap = BootstrapConfig(seed=seed, **boot)
    except (TypeError, ValueError) as exc:
        raise loc.error(("mobility", "bootstrap"), str(exc)) from None
    min_pairs = int(mob.get("min_pairs", 10))

    tr = data.get("transitions") or {}
    t_age = _age_window(tr.get("son_age", [25, 55]), loc, ("transitions", "son_age"))
    t_groups = [ALL] + [g.value for g in SocialGroup]
    if "groups" in tr:
        t_groups = []
        for g in tr["groups"]:
            try:
                t_groups.append(ALL if str(g).upper() == ALL else SocialGroup.parse(g).value)
            except ValueError:
                raise loc.error(("transitions", "groups"), f"unknown group {g!r}") from None

    return RunConfig(
        raw=data,
        seed=seed,
        out=out,
        scheme=scheme,
        inputs=inputs,
        education=education,
        catalogue=catalogue,
        pair_source=pair_source,
        pair_son_age=pair_son_age,
        sei=sei,
        dimensions=dimensions,
        estimators=estimators,
        min_pairs=min_pairs,
        bootstrap=bootstrap,
        transition_son_age=t_age,
        transition_groups=t_groups,
    )


# --------------------------------------------------------------------------
# Output helpers


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _write(path: Path, body: str, prov: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(prov + "\n")
        f.write(body)


def _write_csv(path: Path, rows, prov: str):
    _write(path, _csv_text(rows), prov)


def _write_json(path: Path, data: dict, prov: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"provenance": prov.lstrip("# "), **data}
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _f(x, digits=2) -> str:
    return f"{x:.{digits}f}"


# --------------------------------------------------------------------------
# Pipeline


class Pipeline:
    """Lazily computed stages of one run; each stage command writes its part."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg

    @cached_property
    def ingested(self):
        out = {}
        for ds, spec in self.cfg.inputs.items():
            log.info("reading %s from %s", ds.value, spec.path)
            out[ds] = read_records(spec.path, ds, spec.columns, self.cfg.education, self.cfg.catalogue)
        return out

    @cached_property
    def pairset(self):
        records = self.ingested[self.cfg.pair_source].records
        return build_pairs(records, self.cfg.scheme, self.cfg.pair_son_age)

    @cached_property
    def sei_tables(self):
        by_source = {ds: res.records for ds, res in self.ingested.items()}
        return estimate_cohort_tables(by_source, self.cfg.scheme, self.cfg.sei, self.cfg.catalogue)

    @cached_property
    def averaged(self):
        return average_across_cohorts(self.sei_tables)

    def ranked(self, dimension: Dimension):
        if dimension is Dimension.EDUCATION_YEARS:
            return rank_pairs(self.pairset.pairs, dimension)
        if dimension is Dimension.OCCUPATION_SEI:
            return rank_pairs(self.pairset.pairs, dimension, sei_tables=self.sei_tables)
        return rank_pairs(self.pairset.pairs, dimension, averaged=self.averaged)

    # stage writers ------------------------------------------------------

    def write_ingest(self):
        cfg, prov = self.cfg, self.cfg.provenance
        d = cfg.out / "ingest"
        _write_csv(d / "pairs.csv", [PAIR_COLUMNS, *pair_rows(self.pairset.pairs)], prov)
        report = {
            "records": {ds.value: res.report.to_dict() for ds, res in sorted(self.ingested.items(), key=lambda kv: kv[0].value)},
            "pairs": self.pairset.report.to_dict(),
        }
        _write_json(d / "exclusions.json", report, prov)
        _write_csv(d / "crosstab.csv", self.pairset.crosstab().rows(), prov)

    def write_sei(self):
        cfg, prov = self.cfg, self.cfg.provenance
        d = cfg.out / "sei"
        tables = self.sei_tables
        rows = [["cohort", "occupation_code", "raw_sei", "rescaled_sei"]]
        for t in tables:
            for code, s in t.scores.items():
                rows.append([t.cohort, code, repr(s.raw), repr(s.rescaled)])
        _write_csv(d / "sei_scores.csv", rows, prov)
        _write_csv(
            d / "sei_coefficients.csv",
            [["birth_cohort", "beta_43", "beta_32"], *[[t.cohort, _f(t.beta_43), _f(t.beta_32)] for t in tables]],
            prov,
        )
        fit = [["cohort", "beta_43", "beta_32", "beta_41", "beta_31", "beta_21", "beta_42",
                "iterations", "converged", "n_heads", "inherited_codes", "unscored_codes"]]
        for t in tables:
            inherited = " ".join(str(c) for c, s in t.scores.items() if s.inherited)
            fit.append([t.cohort, *(repr(getattr(t, b)) for b in ("beta_43", "beta_32", "beta_41", "beta_31", "beta_21", "beta_42")),
                        t.iterations, str(t.converged).lower(), t.n_heads, inherited, " ".join(map(str, t.unscored))])
        _write_csv(d / "sei_fit.csv", fit, prov)
        stab = [["", "birth_cohort", "pearson", "spearman", "kendall"]]
        for i, r in enumerate(cohort_stability(tables), start=1):
            stab.append([i, r.cohort, _f(r.pearson), _f(r.spearman), _f(r.kendall)])
        _write_csv(d / "sei_stability.csv", stab, prov)
        _write_csv(
            d / "sei_cohort_averaged.csv",
            [["occupation_code", "mean_rescaled_sei"], *[[c, repr(v)] for c, v in self.averaged.scores.items()]],
            prov,
        )

    def write_mobility(self):
        cfg, prov = self.cfg, self.cfg.provenance
        d = cfg.out / "mobility"
        ranked = {dim: self.ranked(dim) for dim in cfg.dimensions}
        report = mobility_report(ranked, cfg.estimators, cfg.bootstrap, cfg.min_pairs)
        long = [["dimension", "estimator", "group", "cohort", "point", "ci_low", "ci_high", "sd",
                 "sample_estimate", "slope", "intercept", "n_pairs", "n_resamples", "n_failed"]]
        for e in report.estimates:
            long.append([e.dimension.value, e.estimator.value, e.group.value, e.cohort,
                         *(repr(float(v)) for v in (e.point, e.ci_low, e.ci_high, e.sd, e.sample_estimate, e.slope, e.intercept)),
                         e.n_pairs, e.n_resamples, e.n_failed])
        _write_csv(d / "estimates.csv", long, prov)
        fails = [["dimension", "cohort", "group", "estimator", "reason"]]
        for (dim, c, g, e), exc in report.failures.items():
            fails.append([dim.value, c, g.value, e.value, str(exc)])
        _write_csv(d / "failures.csv", fails, prov)
        for dim in cfg.dimensions:
            cohorts = ranked[dim].cohorts
            for est in cfg.estimators:
                stem = f"{dim.cli_name}_{est.value}"
                _write_csv(d / f"grid_{stem}.csv", report.grid(dim, est, cohorts), prov)
                _write_csv(d / f"plot_{stem}.csv", report.plot_rows(dim, est), prov)
        _write_json(
            d / "rank_exclusions.json",
            {dim.value: ranked[dim].report.to_dict() for dim in cfg.dimensions},
            prov,
        )
        return report

    def write_transitions(self):
        cfg, prov = self.cfg, self.cfg.provenance
        d = cfg.out / "transitions"
        for g in cfg.transition_groups:
            m = transition_matrix(self.pairset.pairs, cfg.catalogue, group=g, son_age=cfg.transition_son_age)
            _write(d / f"stm_{g}.txt", render_matrix(m), prov)
            _write_csv(d / f"stm_{g}.csv", matrix_rows(m), prov)


def cmd_ingest(cfg: RunConfig):
    Pipeline(cfg).write_ingest()


def cmd_sei(cfg: RunConfig):
    Pipeline(cfg).write_sei()


def cmd_mobility(cfg: RunConfig):
    Pipeline(cfg).write_mobility()


def cmd_transitions(cfg: RunConfig):
    Pipeline(cfg).write_transitions()


def cmd_pipeline(cfg: RunConfig):
    p = Pipeline(cfg)
    p.write_ingest()
    p.write_sei()
    p.write_mobility()
    p.write_transitions()


def cmd_synth(spec_path, out, seed: int | None = None) -> dict[str, Path]:
    data, loc = load_yaml(spec_path)
    if seed is not None:
        data["seed"] = seed
    try:
        spec = SynthSpec.from_dict(data)
    except ConfigError as exc:
        raise loc.error((), str(exc)) from None
    paths = generate(spec, out)
    chash = hashlib.sha256(json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()[:16]
    prov = provenance_line(chash, spec.seed)
    for p in paths.values():
        body = p.read_text(encoding="utf-8")
        p.write_text(prov + "\n" + body, encoding="utf-8")
    return paths


# --------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="socmob", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"socmob {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--scheme", choices=["base", "shifted"])
        p.add_argument(
            "--dimension",
            choices=["occupation", "occupation-constant", "education"],
            action="append",
            help="restrict mobility dimensions (repeatable)",
        )

    for name in ("ingest", "sei", "mobility", "transitions", "pipeline"):
        common(sub.add_parser(name))
    ps = sub.add_parser("synth", help="write a synthetic survey")
    ps.add_argument("--spec", required=True, help="YAML synthetic spec")
    ps.add_argument("--out", required=True)
    ps.add_argument("--seed", type=int)
    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "sei": cmd_sei,
    "mobility": cmd_mobility,
    "transitions": cmd_transitions,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "synth":
            paths = cmd_synth(args.spec, args.out, args.seed)
            for p in paths.values():
                print(p)
            return EXIT_OK
        overrides: dict[str, Any] = {"seed": args.seed, "scheme": args.scheme}
        if args.out is not None:
            overrides["out"] = str(Path(args.out).resolve())
        cfg = load_config(args.config, overrides)
        if args.dimension:
            cfg.dimensions = [Dimension.parse(d) for d in args.dimension]
            cfg.raw["_dimensions"] = [d.value for d in cfg.dimensions]
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"socmob: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataValidationError as exc:
        print(f"socmob: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"socmob: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SocmobError as exc:
        print(f"socmob: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
