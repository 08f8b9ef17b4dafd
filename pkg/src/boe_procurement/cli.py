"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 operational error (network, I/O, bad data), 2
usage error. Stages hand over through files: ``fetch`` fills the cache,
``parse`` writes JSON lines, ``clean`` and ``subset`` write CSV.
"""
from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from decimal import Decimal, InvalidOperation
from pathlib import Path

from . import __version__
from .analytics import report as report_mod
from .analytics.clustering import (
    DEFAULT_SEED,
    assign_clusters,
    build_contractor_profiles,
    elbow_point,
    elbow_scan,
    kmeans,
)
from .analytics.descriptive import (
    aggregate_geography,
    awarded_values,
    describe_values,
    tier_records,
    yearly_sector_counts,
)
from .analytics.plots import emit_plot_data
from .analytics.regression import DEFAULT_SPLIT, PREDICTORS, fit_regression
from .clean import (
    DEFAULT_THRESHOLD_CENTS,
    analytical_subset,
    build_records,
    filter_records,
    flag_non_contractors,
    load_aliases,
    load_denylist,
    renormalize,
)
from .errors import PreconditionError, ProcurementError
from .fetch import FetchConfig, FetchFailure, Fetcher, load_cached_documents
from .parse import ParsedAnnouncement, load_ruleset, parse_announcement
from .records import ANALYTICAL_COLUMNS, Naturaleza
from .store import export_ocds, read_csv, write_csv

logger = logging.getLogger("boe_procurement")

SUBCOMMANDS = ("fetch", "parse", "clean", "subset", "export-ocds", "stats", "regress",
               "cluster", "test", "report")

# Built-in defaults; a config file may override them and flags override both.
DEFAULTS = {
    "base_url": None,   # day-index URL template with {YYYY}, {MM}, {DD}
    "cache_dir": None,  # FetchConfig falls back to the environment variable
    "rate_limit_ms": 1000.0,
    "retries": 3,
    "timeout_s": 30.0,
    "threshold": str(DEFAULT_THRESHOLD_CENTS // 100),
    "seed": DEFAULT_SEED,
    "k": 3,
    "split": DEFAULT_SPLIT,
    "groups": "Obras,Servicios",
    "rules": None,
    "aliases": None,
    "denylist": None,
    "log_level": "WARNING",
    "from": None,
    "to": None,
    "input": None,
    "output": None,
}


class UsageError(Exception):
    """Bad flag value detected after argparse accepted the syntax."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", help="JSON file whose keys mirror the long flag names")
    g.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=None)
    g.add_argument("--input", default=None, help="input file")
    g.add_argument("--output", default=None, help="output file or directory")
    g.add_argument("--from", dest="from_", metavar="YYYY-MM-DD", default=None)
    g.add_argument("--to", metavar="YYYY-MM-DD", default=None)
    g.add_argument("--cache-dir", default=None)
    g.add_argument("--base-url", default=None,
                   help="day-index URL template with {YYYY}, {MM} and {DD} placeholders")
    g.add_argument("--rate-limit-ms", type=float, default=None,
                   help="minimum gap between request starts (default 1000)")
    g.add_argument("--retries", type=int, default=None, help="retries per request (default 3)")
    g.add_argument("--timeout-s", type=float, default=None, help="request timeout (default 30)")
    g.add_argument("--rules", default=None, help="extraction rule file to use for every date")
    g.add_argument("--threshold", default=None,
                   help="minimum awarded value in euros; lower values are dropped (default 1000)")
    g.add_argument("--aliases", default=None, help="entity alias TSV (canonical<TAB>variant)")
    g.add_argument("--denylist", default=None, help="file of awardee names that are not contractors")
    g.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
    g.add_argument("--k", type=int, default=None, help="number of clusters (default 3)")
    g.add_argument("--split", type=float, default=None, help="training share (default 0.7)")
    g.add_argument("--groups", default=None,
                   help="two contract categories to compare (default Obras,Servicios)")

    parser = _Parser(prog="boe-procurement",
                     description="Procurement notices from the Spanish official gazette: ETL and analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "fetch": "download day indices and announcements into the cache",
        "parse": "extract raw fields from cached pages into JSON lines",
        "clean": "build typed records, filter them and print the cleaning report",
        "subset": "keep award records with amount and contractor",
        "export-ocds": "write an OCDS release package",
        "stats": "descriptive statistics over awarded values",
        "regress": "one-hot linear regression of awarded value",
        "cluster": "K-Means segmentation of contractors",
        "test": "rank-sum, normality and variance tests between two categories",
        "report": "run clean, subset and every analysis; write a report directory",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
    return parser


# -- option resolution -----------------------------------------------------------

def _resolve(args) -> dict:
    opts = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: cannot read {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("--config: expected a JSON object")
        for key, value in loaded.items():
            norm = key.lstrip("-").replace("-", "_")
            if norm not in DEFAULTS:
                raise UsageError(f"--config: unknown key {key!r}")
            opts[norm] = value
    for key in DEFAULTS:
        value = getattr(args, "from_" if key == "from" else key, None)
        if value is not None:
            opts[key] = value
    return opts


def _date(opts, key) -> dt.date:
    value = opts[key]
    if value is None:
        raise UsageError(f"--{key} is required")
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise UsageError(f"--{key}: expected YYYY-MM-DD, got {value!r}") from None


def _date_range(opts) -> tuple[dt.date, dt.date]:
    start, end = _date(opts, "from"), _date(opts, "to")
    if start > end:
        raise UsageError(f"--from {start} is after --to {end}")
    return start, end


def _threshold_cents(opts) -> int:
    raw = str(opts["threshold"]).strip()
    try:
        value = Decimal(raw)
        exact = value == value.quantize(Decimal("0.01"))
    except InvalidOperation:
        raise UsageError(f"--threshold: not a number: {raw!r}") from None
    if value < 0 or not exact:
        raise UsageError(f"--threshold: expected a non-negative amount in euros, got {raw!r}")
    return int(value * 100)


def _groups(opts) -> tuple[Naturaleza, Naturaleza]:
    parts = [p.strip() for p in str(opts["groups"]).split(",") if p.strip()]
    if len(parts) != 2:
        raise UsageError(f"--groups: expected two comma-separated categories, got {opts['groups']!r}")
    try:
        a, b = (Naturaleza.from_label(p) for p in parts)
    except (KeyError, ValueError):
        raise UsageError(f"--groups: unknown category in {opts['groups']!r}") from None
    if a is b:
        raise UsageError("--groups: the two categories must differ")
    return a, b


def _require(opts, key) -> Path:
    if not opts[key]:
        raise UsageError(f"--{key} is required for this command")
    return Path(opts[key])


def _split(opts) -> float:
    split = float(opts["split"])
    if not 0 < split < 1:
        raise UsageError(f"--split must lie strictly between 0 and 1, got {split}")
    return split


def _k(opts) -> int:
    k = int(opts["k"])
    if k < 1:
        raise UsageError(f"--k must be >= 1, got {k}")
    return k


def _fetch_config(opts) -> FetchConfig:
    kwargs = dict(timeout=float(opts["timeout_s"]), max_retries=int(opts["retries"]),
                  inter_request_delay=float(opts["rate_limit_ms"]))
    if opts["cache_dir"]:
        kwargs["cache_dir"] = Path(opts["cache_dir"])
    if opts["base_url"]:
        kwargs["base_url_template"] = str(opts["base_url"])
    try:
        return FetchConfig(**kwargs)
    except PreconditionError as exc:
        raise UsageError(str(exc)) from exc


def _rules(opts):
    return load_ruleset(opts["rules"]) if opts["rules"] else None


# -- record loading ------------------------------------------------------------------

def _read_parsed(path: Path) -> list[ParsedAnnouncement]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(ParsedAnnouncement.from_json(json.loads(line)))
    return out


def _clean_stage(path: Path, opts):
    """Records and cleaning report from parsed JSON lines or a record CSV."""
    aliases = load_aliases(opts["aliases"])
    denylist = load_denylist(opts["denylist"])
    if path.suffix.lower() in (".jsonl", ".json"):
        warnings = []
        records, _, delta = build_records(_read_parsed(path), aliases, warnings)
        for w in warnings:
            logger.info("clean: %s", w)
    else:
        errors = []
        records = renormalize(read_csv(path, tolerant=True, errors=errors), aliases)
        for err in errors:
            logger.warning("clean: %s", err)
        delta = 0
    kept, rep = filter_records(records, _threshold_cents(opts), delta)
    return flag_non_contractors(kept, denylist), rep


def _analysis_records(opts):
    path = _require(opts, "input")
    records = read_csv(path, tolerant=True)
    return flag_non_contractors(records, load_denylist(opts["denylist"]))


def _emit(text: str):
    sys.stdout.write(text.rstrip("\n") + "\n")


# -- commands ----------------------------------------------------------------------

def cmd_fetch(opts) -> int:
    start, end = _date_range(opts)
    cfg = _fetch_config(opts)
    fetcher = Fetcher(cfg)
    n_index = n_docs = 0
    failures = []
    for item in fetcher.crawl_range(start, end, rules=_rules(opts)):
        if isinstance(item, FetchFailure):
            failures.append(item)
            logger.warning("fetch failed: %s %s (%s)", item.key, item.url, item.error)
        elif item.is_index:
            n_index += 1
        else:
            n_docs += 1
    _emit(f"fetched {n_index} day indices and {n_docs} announcements into {cfg.cache_dir} "
          f"({fetcher.network_calls} network requests, {len(failures)} failures)")
    for f in failures:
        _emit(f"  failed {f.key}: {f.error}")
    return 1 if failures else 0


def cmd_parse(opts) -> int:
    start, end = _date_range(opts)
    out = _require(opts, "output")
    cfg = _fetch_config(opts)
    rules = _rules(opts)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = n_warn = 0
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for _, docs in load_cached_documents(cfg, start, end, rules):
            for doc in docs:
                parsed = parse_announcement(doc, rules)
                n_warn += len(parsed.parse_warnings)
                fh.write(json.dumps(parsed.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
                n += 1
    _emit(f"parsed {n} announcements ({n_warn} field warnings) into {out}")
    return 0


def cmd_clean(opts) -> int:
    src, out = _require(opts, "input"), _require(opts, "output")
    records, rep = _clean_stage(src, opts)
    write_csv(records, out)
    _emit(rep.to_text())
    return 0


def cmd_subset(opts) -> int:
    src, out = _require(opts, "input"), _require(opts, "output")
    records = read_csv(src, tolerant=True)
    subset = analytical_subset(records)
    write_csv(subset, out, columns=ANALYTICAL_COLUMNS)
    _emit(f"analytical subset: {len(subset)} of {len(records)} records written to {out}")
    return 0


def cmd_export_ocds(opts) -> int:
    src, out = _require(opts, "input"), _require(opts, "output")
    skipped = []
    n = export_ocds(read_csv(src, tolerant=True), out, skip_invalid=True, skipped=skipped)
    _emit(f"wrote {n} releases to {out}; skipped {len(skipped)} invalid records")
    for s in skipped:
        logger.info("skipped: %s", s)
    return 0


def cmd_stats(opts) -> int:
    records = _analysis_records(opts)
    values = awarded_values(records)
    d = describe_values(values)
    lines = ["Awarded values (EUR)", f"  n       {d.n}"]
    lines += [f"  {name:<7} {report_mod.format_euros(getattr(d, name))}"
              for name in ("mean", "median", "min", "max", "q1", "q3")]
    if len(values) >= 4:
        thresholds, tiers = tier_records(values)
        lines.append("Tiers")
        for tier, s in tiers.items():
            lines.append(f"  {tier.value:<9} n={s.n if s else 0} "
                         f"median={report_mod.format_euros(s.median) if s else 'n/a'}")
    lines.append("Geographic scope")
    lines += [f"  {name}: {n}" for name, n in aggregate_geography(records)[:5]]
    sectors = yearly_sector_counts(records)
    lines.append("Services + supplies share by year")
    lines += [f"  {y}: {sectors.share[y]:.3f}" for y in sectors.years()]
    _emit("\n".join(lines))
    if opts["output"]:
        emit_plot_data("log_histogram", [v for v in values if v > 0], opts["output"])
    return 0


def cmd_regress(opts) -> int:
    split = _split(opts)
    records = _analysis_records(opts)
    fit = fit_regression(records, PREDICTORS, split=split, seed=int(opts["seed"]))
    m = fit.metrics
    lines = [f"train {fit.n_train} / test {fit.n_test} rows, seed {fit.seed}",
             f"MAE  {m['mae']:,.2f}", f"RMSE {m['rmse']:,.2f}",
             f"R2   {m['r2']:.6f}", f"adjusted R2 {m['adj_r2']:.6f}"]
    lines += [f"note: {n}" for n in fit.notes]
    _emit("\n".join(lines))
    if opts["output"]:
        emit_plot_data("hexbin", (fit.y_pred, fit.y_test), opts["output"])
    return 0


def cmd_cluster(opts) -> int:
    k, seed = _k(opts), int(opts["seed"])
    records = _analysis_records(opts)
    profiles = build_contractor_profiles(records)
    result = kmeans(profiles, k, seed=seed)
    profiles = assign_clusters(profiles, result.assignments)
    lines = [f"{len(profiles)} contractors, k = {k}, seed {seed}"]
    for s in report_mod.summarize_clusters(profiles, k):
        lines.append(f"  cluster {s.cluster + 1}: n={s.size} median contracts="
                     f"{float(s.median_contracts):g} median value={report_mod.format_euros(s.median_value)}")
    ks = [kk for kk in range(1, 9) if kk <= len(profiles)]
    if len(ks) >= 3:
        scan = elbow_scan(profiles, ks, seed=seed)
        lines.append("elbow: " + ", ".join(f"k={kk}:{v:.4g}" for kk, v in scan)
                     + f" -> k = {elbow_point(scan)}")
    _emit("\n".join(lines))
    if opts["output"]:
        emit_plot_data("cluster_scatter", profiles, opts["output"])
    return 0


def cmd_test(opts) -> int:
    groups = _groups(opts)
    records = _analysis_records(opts)
    t = report_mod.hypothesis_tests(records, groups, seed=int(opts["seed"]))
    a, b = groups
    rs = t.rank_sum
    lines = [f"{a.value} (n={rs.sizes[0]}) vs {b.value} (n={rs.sizes[1]})",
             f"W = {_stat(rs.statistic)}", f"p = {rs.p_value:.6g}", f"({rs.notes})"]
    for label, r in t.shapiro.items():
        if isinstance(r, Exception):
            lines.append(f"Shapiro-Wilk log10 {label.value}: not available ({r})")
        else:
            lines.append(f"Shapiro-Wilk log10 {label.value}: W = {r.statistic:.6f}, p = {r.p_value:.6g}")
    lv = t.levene
    if isinstance(lv, Exception):
        lines.append(f"Levene log10: not available ({lv})")
    else:
        lines.append(f"Levene log10: F = {lv.statistic:.4f}, df = ({lv.df[0]}, {lv.df[1]}), "
                     f"p = {lv.p_value:.6g}")
    _emit("\n".join(lines))
    return 0


def _stat(x: float) -> str:
    return f"{x:,.0f}" if float(x).is_integer() else f"{x:,.1f}"


def cmd_report(opts) -> int:
    src, out_dir = _require(opts, "input"), _require(opts, "output")
    groups, split, k, seed = _groups(opts), _split(opts), _k(opts), int(opts["seed"])
    out_dir.mkdir(parents=True, exist_ok=True)
    cleaned, rep = _clean_stage(src, opts)
    write_csv(cleaned, out_dir / "clean.csv")
    # Round-trip through the files so the analyses see exactly what `subset` would.
    cleaned = read_csv(out_dir / "clean.csv", tolerant=True)
    subset = analytical_subset(cleaned)
    write_csv(subset, out_dir / "subset.csv", columns=ANALYTICAL_COLUMNS)
    subset = flag_non_contractors(read_csv(out_dir / "subset.csv", tolerant=True),
                                  load_denylist(opts["denylist"]))
    results = report_mod.run_analysis(subset, seed=seed, k=k, split=split, groups=groups)
    report_mod.emit_all_plot_data(subset, results, out_dir / "plots", tender_records=cleaned)
    text = report_mod.render_markdown(results, rep, subset_size=len(subset))
    (out_dir / "report.md").write_text(text + "\n", encoding="utf-8")
    _emit(rep.to_text())
    _emit(f"report written to {out_dir / 'report.md'}")
    return 0


COMMANDS = {
    "fetch": cmd_fetch,
    "parse": cmd_parse,
    "clean": cmd_clean,
    "subset": cmd_subset,
    "export-ocds": cmd_export_ocds,
    "stats": cmd_stats,
    "regress": cmd_regress,
    "cluster": cmd_cluster,
    "test": cmd_test,
    "report": cmd_report,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return 2
        opts = _resolve(args)
        logging.basicConfig(level=getattr(logging, str(opts["log_level"]).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else 0
    except (ProcurementError, OSError, ValueError) as exc:
        stage = getattr(args, "command", None) or "?"
        print(f"error [{stage}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
