"""Subcommand CLI wiring the pipeline stages together.

Exit codes: 0 success; 1 fatal configuration/contract error; 2 when the
instance-level failure count exceeds the configured threshold. A
machine-readable run summary goes to stderr as JSON.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from . import lexicon as lexmod
from . import masking, metrics, neutralizer, oracle, records

log = logging.getLogger(__name__)


class CliError(records.PipelineError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors as exit-1 CliErrors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def _read_text(path: Optional[str]) -> str:
    if not path:
        return ""
    return Path(path).read_text(encoding="utf-8")


def _packaged_rules_text() -> str:
    path = resources.files("medneutral").joinpath("data", "classification_rules.txt")
    return path.read_text(encoding="utf-8")


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise CliError(f"not a boolean: {value!r}")


_CONFIG_KEYS = {
    "pronoun_lexicon", "occupation_lexicon", "background", "rules",
    "backend", "endpoint", "model", "script", "transcript", "record",
    "year_from", "year_to", "seed", "verb_agreement", "gender_guard",
    "strict_match", "workers", "max_failures", "max_retries",
    "requests_per_minute", "timeout",
}


def load_config_file(path: str) -> dict:
    """key=value lines; `#` comments and blank lines ignored."""
    values: dict[str, str] = {}
    for line_number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _CONFIG_KEYS:
            raise CliError(f"{path}:{line_number}: bad config line {line!r}")
        values[key] = value.strip()
    return values


@dataclass
class PipelineConfig:
    pronoun_lexicon: lexmod.Lexicon
    occupation_lexicon: lexmod.Lexicon
    background_text: str
    rules_text: str
    backend_config: Optional[oracle.OracleBackendConfig]
    record_to: Optional[str]
    year_range: Optional[tuple[int, int]]
    seed: int
    verb_agreement: bool
    gender_guard: bool
    strict_match: bool
    workers: int
    max_failures: int


def _require_path(path: Optional[str], what: str) -> Optional[str]:
    if path and not Path(path).exists():
        raise CliError(f"{what} not found: {path}")
    return path


def build_pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}

    def setting(key: str, flag_value, default=None):
        if flag_value is not None:
            return flag_value
        if key in file_values:
            return file_values[key]
        return default

    pron_path = _require_path(
        setting("pronoun_lexicon", getattr(args, "pronoun_lexicon", None)), "pronoun lexicon"
    )
    occ_path = _require_path(
        setting("occupation_lexicon", getattr(args, "occupation_lexicon", None)),
        "occupation lexicon",
    )
    background_path = _require_path(
        setting("background", getattr(args, "background", None)), "background text"
    )
    rules_path = _require_path(setting("rules", getattr(args, "rules", None)), "rules text")
    script_path = _require_path(
        setting("script", getattr(args, "script", None)), "mock script"
    )
    transcript_path = _require_path(
        setting("transcript", getattr(args, "transcript", None)), "replay transcript"
    )

    if pron_path:
        with open(pron_path, encoding="utf-8") as fh:
            pronoun_lexicon = lexmod.load_lexicon(fh, lexmod.PRONOUN_LEXICON_NAME)
    else:
        pronoun_lexicon = lexmod.load_default_lexicon("pronouns")
    if occ_path:
        with open(occ_path, encoding="utf-8") as fh:
            occupation_lexicon = lexmod.load_lexicon(fh, lexmod.OCCUPATION_LEXICON_NAME)
    else:
        occupation_lexicon = lexmod.load_default_lexicon("occupations")

    backend_kind = setting("backend", getattr(args, "backend", None))
    backend_config = None
    if backend_kind:
        backend_config = oracle.OracleBackendConfig(
            kind=backend_kind,
            endpoint=setting("endpoint", getattr(args, "endpoint", None)),
            model_name=setting("model", getattr(args, "model", None)),
            max_retries=int(setting("max_retries", getattr(args, "max_retries", None), 3)),
            requests_per_minute=int(
                setting("requests_per_minute", getattr(args, "requests_per_minute", None), 60)
            ),
            timeout=float(setting("timeout", getattr(args, "timeout", None), 30.0)),
            script_path=script_path,
            transcript_path=transcript_path,
        )

    year_from = setting("year_from", getattr(args, "year_from", None))
    year_to = setting("year_to", getattr(args, "year_to", None))
    year_range = None
    if year_from is not None or year_to is not None:
        year_range = (
            int(year_from) if year_from is not None else 0,
            int(year_to) if year_to is not None else 9999,
        )

    seed = int(setting("seed", getattr(args, "seed", None), 0))
    if not (0 <= seed < 2**64):
        raise CliError(f"seed must be a 64-bit unsigned integer, got {seed}")

    verb_agreement = setting("verb_agreement", getattr(args, "verb_agreement", None), True)
    gender_guard = setting("gender_guard", getattr(args, "gender_guard", None), False)
    strict_match = setting("strict_match", getattr(args, "strict_match", None), False)
    if isinstance(verb_agreement, str):
        verb_agreement = _parse_bool(verb_agreement)
    if isinstance(gender_guard, str):
        gender_guard = _parse_bool(gender_guard)
    if isinstance(strict_match, str):
        strict_match = _parse_bool(strict_match)

    return PipelineConfig(
        pronoun_lexicon=pronoun_lexicon,
        occupation_lexicon=occupation_lexicon,
        background_text=_read_text(background_path),
        rules_text=_read_text(rules_path) if rules_path else _packaged_rules_text(),
        backend_config=backend_config,
        record_to=setting("record", getattr(args, "record", None)),
        year_range=year_range,
        seed=seed,
        verb_agreement=bool(verb_agreement),
        gender_guard=bool(gender_guard),
        strict_match=bool(strict_match),
        workers=int(setting("workers", getattr(args, "workers", None), 1)),
        max_failures=int(setting("max_failures", getattr(args, "max_failures", None), 0)),
    )


# ---------------------------------------------------------------------------
# stages (shared by the single-stage subcommands and `pipeline`)

def _load_abstracts(path: str) -> tuple[list[records.Abstract], list[records.RecordError]]:
    errors: list[records.RecordError] = []
    with open(path, encoding="utf-8") as fh:
        abstracts = list(records.read_abstracts(fh, errors))
    return abstracts, errors


def _abstracts_by_pmid(abstracts: Sequence[records.Abstract]) -> dict[str, records.Abstract]:
    return {a.pmid: a for a in abstracts}


def stage_scan(abstracts_path: str, out_path: str, config: PipelineConfig) -> dict:
    from .scanner import scan_corpus

    abstracts, errors = _load_abstracts(abstracts_path)
    instances = list(scan_corpus(abstracts, config.pronoun_lexicon, config.year_range))
    with open(out_path, "w", encoding="utf-8") as fh:
        records.write_records(instances, fh)
    return {
        "abstracts_in": len(abstracts),
        "record_errors": len(errors),
        "instances_out": len(instances),
    }


def stage_resolve(
    instances_path: str,
    abstracts_path: str,
    out_path: str,
    config: PipelineConfig,
    failures_path: Optional[str] = None,
) -> dict:
    if config.backend_config is None:
        raise CliError("resolve requires --backend")
    backend = oracle.build_backend(config.backend_config, record_to=config.record_to)
    abstracts, _ = _load_abstracts(abstracts_path)
    by_pmid = _abstracts_by_pmid(abstracts)
    with open(instances_path, encoding="utf-8") as fh:
        raw_instances = list(records.read_instances(fh))

    # merge "X or Y" compounds so one oracle call covers the pair
    merged: list[records.PronounInstance] = []
    by_abstract: dict[str, list[records.PronounInstance]] = {}
    for inst in raw_instances:
        by_abstract.setdefault(inst.pmid, []).append(inst)
    for pmid in by_abstract:
        if pmid not in by_pmid:
            raise CliError(f"instances reference unknown pmid {pmid}")
    seen: set[str] = set()
    for inst in raw_instances:
        if inst.pmid in seen:
            continue
        seen.add(inst.pmid)
        merged.extend(
            neutralizer.detect_compounds(by_pmid[inst.pmid].text, by_abstract[inst.pmid])
        )

    resolved, failures = oracle.resolve_corpus(
        merged, by_pmid, backend, config.background_text, config.workers
    )
    with open(out_path, "w", encoding="utf-8") as fh:
        records.write_records(resolved, fh)
    if failures_path:
        with open(failures_path, "w", encoding="utf-8") as fh:
            records.write_records(failures, fh)
    return {
        "instances_in": len(raw_instances),
        "after_compound_merge": len(merged),
        "resolved_out": len(resolved),
        "failures": len(failures),
    }


def stage_classify(
    resolved_path: str,
    abstracts_path: str,
    out_path: str,
    config: PipelineConfig,
    failures_path: Optional[str] = None,
) -> dict:
    if config.backend_config is None:
        raise CliError("classify requires --backend")
    backend = oracle.build_backend(config.backend_config, record_to=config.record_to)
    abstracts, _ = _load_abstracts(abstracts_path)
    by_pmid = _abstracts_by_pmid(abstracts)
    with open(resolved_path, encoding="utf-8") as fh:
        resolved = list(records.read_resolved(fh))
    classified, failures = oracle.classify_corpus(
        resolved, by_pmid, backend, config.rules_text, config.workers
    )
    with open(out_path, "w", encoding="utf-8") as fh:
        records.write_records(classified, fh)
    if failures_path:
        with open(failures_path, "w", encoding="utf-8") as fh:
            records.write_records(failures, fh)
    return {
        "resolved_in": len(resolved),
        "classified_out": len(classified),
        "failures": len(failures),
    }


def stage_neutralize(
    abstracts_path: str,
    classified_path: str,
    out_path: str,
    edits_path: str,
    config: PipelineConfig,
) -> dict:
    abstracts, _ = _load_abstracts(abstracts_path)
    with open(classified_path, encoding="utf-8") as fh:
        classified = list(records.read_classified(fh))
    by_pmid: dict[str, list[records.ClassifiedInstance]] = {}
    for ci in classified:
        by_pmid.setdefault(ci.instance.pmid, []).append(ci)

    edit_count = 0
    with open(out_path, "w", encoding="utf-8") as out_fh, open(
        edits_path, "w", encoding="utf-8"
    ) as edits_fh:
        for abstract in abstracts:
            new_text, edits = neutralizer.neutralize_abstract(
                abstract,
                by_pmid.get(abstract.pmid, []),
                verb_agreement=config.verb_agreement,
                gender_guard=config.gender_guard,
            )
            records.write_records(
                [records.Abstract(pmid=abstract.pmid, text=new_text, date=abstract.date)],
                out_fh,
            )
            records.write_records(edits, edits_fh)
            edit_count += len(edits)
    return {
        "abstracts_in": len(abstracts),
        "classified_in": len(classified),
        "edits_out": edit_count,
    }


# ---------------------------------------------------------------------------
# subcommands

def _emit_summary(command: str, counts: dict) -> None:
    print(json.dumps({"command": command, "counts": counts}), file=sys.stderr)


def _failure_exit(counts: dict, config: PipelineConfig) -> int:
    return 2 if counts.get("failures", 0) > config.max_failures else 0


def cmd_scan(args) -> int:
    config = build_pipeline_config(args)
    counts = stage_scan(args.inp, args.out, config)
    _emit_summary("scan", counts)
    return 0


def cmd_resolve(args) -> int:
    config = build_pipeline_config(args)
    counts = stage_resolve(args.inp, args.abstracts, args.out, config, args.failures)
    _emit_summary("resolve", counts)
    return _failure_exit(counts, config)


def cmd_classify(args) -> int:
    config = build_pipeline_config(args)
    counts = stage_classify(args.inp, args.abstracts, args.out, config, args.failures)
    _emit_summary("classify", counts)
    return _failure_exit(counts, config)


def cmd_filter_occ(args) -> int:
    config = build_pipeline_config(args)
    with open(args.inp, encoding="utf-8") as fh:
        resolved = list(records.read_resolved(fh))
    kept = [
        r
        for r in resolved
        if lexmod.contains_occupational_term(r.antecedent_text, config.occupation_lexicon)
    ]
    with open(args.out, "w", encoding="utf-8") as fh:
        records.write_records(kept, fh)
    _emit_summary("filter-occ", {"resolved_in": len(resolved), "kept_out": len(kept)})
    return 0


def cmd_neutralize(args) -> int:
    config = build_pipeline_config(args)
    counts = stage_neutralize(args.inp, args.classified, args.out, args.edits, config)
    _emit_summary("neutralize", counts)
    return 0


def _aligned_labels(path_a: str, path_b: str):
    with open(path_a, encoding="utf-8") as fh:
        by_id_a = {c.instance.instance_id: c for c in records.read_classified(fh)}
    with open(path_b, encoding="utf-8") as fh:
        by_id_b = {c.instance.instance_id: c for c in records.read_classified(fh)}
    if set(by_id_a) != set(by_id_b):
        missing = set(by_id_a) ^ set(by_id_b)
        raise CliError(f"annotation files cover different instances ({len(missing)} unmatched)")
    ids = tuple(sorted(by_id_a))
    return ids, by_id_a, by_id_b


def cmd_kappa(args) -> int:
    ids, by_id_a, by_id_b = _aligned_labels(args.a, args.b)
    pair = metrics.LabelSequencePair(
        ids=ids,
        labels_a=tuple(by_id_a[i].label for i in ids),
        labels_b=tuple(by_id_b[i].label for i in ids),
    )
    result = metrics.cohen_kappa(pair)
    print(
        f"kappa {result.kappa:.4f} (observed {result.observed_agreement:.4f}, "
        f"expected {result.expected_agreement:.4f}, n={result.n})"
    )
    _emit_summary("kappa", {"pairs_in": result.n})
    return 0


def cmd_metrics(args) -> int:
    config = build_pipeline_config(args)
    ids, by_id_pred, by_id_gold = _aligned_labels(args.pred, args.gold)
    report = metrics.classification_metrics(
        [by_id_pred[i].label for i in ids], [by_id_gold[i].label for i in ids]
    )
    accuracy = metrics.resolution_accuracy(
        [by_id_pred[i].resolved.antecedent_text for i in ids],
        [by_id_gold[i].resolved.antecedent_text for i in ids],
        strict=config.strict_match,
    )
    print(report.to_table())
    print(f"antecedent accuracy: {accuracy:.4f}"
          + (" (strict)" if config.strict_match else " (normalized)"))
    if args.out:
        payload = report.to_dict()
        payload["antecedent_accuracy"] = accuracy
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    _emit_summary("metrics", {"pairs_in": len(ids)})
    return 0


def cmd_build_tests(args) -> int:
    config = build_pipeline_config(args)
    abstracts, _ = _load_abstracts(args.abstracts)
    by_pmid = _abstracts_by_pmid(abstracts)
    with open(args.classified, encoding="utf-8") as fh:
        classified = list(records.read_classified(fh))
    with open(args.edits, encoding="utf-8") as fh:
        edits = [neutralizer.EditRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
    ranked = masking.top_terms(edits, config.occupation_lexicon, args.k)
    cases = masking.build_mask_tests(
        classified, by_pmid, [t for t, _ in ranked], args.n_per_term, config.seed
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        records.write_records(cases, fh)
    _emit_summary(
        "build-tests",
        {
            "classified_in": len(classified),
            "edits_in": len(edits),
            "terms": dict(ranked),
            "cases_out": len(cases),
        },
    )
    return 0


def cmd_eval_mlm(args) -> int:
    config = build_pipeline_config(args)
    with open(args.cases, encoding="utf-8") as fh:
        cases = [masking.MaskTestCase.from_dict(json.loads(line)) for line in fh if line.strip()]
    if args.choices:
        scorer = masking.ScriptedScorer.from_file(args.choices)
    elif args.scorer_url:
        scorer = masking.RemoteScorer(args.scorer_url)
    else:
        raise CliError("eval-mlm requires --choices or --scorer-url")
    frequencies = {}
    if args.edits:
        with open(args.edits, encoding="utf-8") as fh:
            edits = [
                neutralizer.EditRecord.from_dict(json.loads(line)) for line in fh if line.strip()
            ]
        frequencies = dict(masking.top_terms(edits, config.occupation_lexicon, len(edits) or 1))
    report = masking.run_masking_eval(cases, scorer, args.model_name, frequencies)
    print(report.to_table())
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
    _emit_summary(
        "eval-mlm",
        {"cases_in": len(cases), "scored": report.scored, "unscored": report.unscored},
    )
    return 0


def cmd_compare(args) -> int:
    reports = []
    for path in args.reports:
        reports.append(
            masking.EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        )
    comparison = masking.compare_models(reports)
    print(comparison.to_table())
    _emit_summary("compare", {"reports_in": len(reports)})
    return 0


def cmd_pipeline(args) -> int:
    config = build_pipeline_config(args)
    workdir = args.workdir or tempfile.mkdtemp(prefix="medneutral-")
    Path(workdir).mkdir(parents=True, exist_ok=True)
    instances_path = str(Path(workdir) / "instances.jsonl")
    resolved_path = str(Path(workdir) / "resolved.jsonl")
    classified_path = str(Path(workdir) / "classified.jsonl")

    counts = {"stages": {}}
    counts["stages"]["scan"] = stage_scan(args.inp, instances_path, config)
    counts["stages"]["resolve"] = stage_resolve(
        instances_path, args.inp, resolved_path, config
    )
    counts["stages"]["classify"] = stage_classify(
        resolved_path, args.inp, classified_path, config
    )
    counts["stages"]["neutralize"] = stage_neutralize(
        args.inp, classified_path, args.out, args.edits, config
    )
    failures = (
        counts["stages"]["resolve"]["failures"] + counts["stages"]["classify"]["failures"]
    )
    counts["failures"] = failures
    _emit_summary("pipeline", counts)
    return 2 if failures > config.max_failures else 0


# ---------------------------------------------------------------------------
# parser

def _add_common(parser: _Parser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--pronoun-lexicon", dest="pronoun_lexicon")
    parser.add_argument("--occupation-lexicon", dest="occupation_lexicon")
    parser.add_argument("--background", help="antecedent background text file")
    parser.add_argument("--rules", help="classification rules text file")
    parser.add_argument("--backend", choices=["remote", "mock", "replay"])
    parser.add_argument("--endpoint")
    parser.add_argument("--model")
    parser.add_argument("--script", help="mock backend rules (JSONL contains/reply)")
    parser.add_argument("--transcript", help="replay transcript (JSONL prompt_hash/reply)")
    parser.add_argument("--record", help="record replies to this transcript file")
    parser.add_argument("--max-retries", dest="max_retries", type=int)
    parser.add_argument("--requests-per-minute", dest="requests_per_minute", type=int)
    parser.add_argument("--timeout", type=float)
    parser.add_argument("--year-from", dest="year_from", type=int)
    parser.add_argument("--year-to", dest="year_to", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--max-failures", dest="max_failures", type=int)
    parser.add_argument(
        "--no-verb-agreement", dest="verb_agreement", action="store_false", default=None
    )
    parser.add_argument("--gender-guard", dest="gender_guard", action="store_true", default=None)
    parser.add_argument("--strict-match", dest="strict_match", action="store_true", default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="medneutral", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("scan", help="find gendered pronoun instances")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("resolve", help="resolve antecedents via the oracle")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--abstracts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--failures", help="write instance failures to this JSONL file")
    _add_common(p)
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("classify", help="classify resolved antecedents")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--abstracts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--failures")
    _add_common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("filter-occ", help="keep instances with occupational antecedents")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_filter_occ)

    p = sub.add_parser("neutralize", help="rewrite occupation-linked pronouns")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--classified", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--edits", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_neutralize)

    p = sub.add_parser("kappa", help="inter-annotator agreement")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_kappa)

    p = sub.add_parser("metrics", help="classification metrics against gold labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("build-tests", help="build masked-pronoun test cases")
    p.add_argument("--classified", required=True)
    p.add_argument("--abstracts", required=True)
    p.add_argument("--edits", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--n-per-term", dest="n_per_term", type=int, default=10)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_build_tests)

    p = sub.add_parser("eval-mlm", help="run the masking evaluation")
    p.add_argument("--cases", required=True)
    p.add_argument("--scorer-url", dest="scorer_url")
    p.add_argument("--choices", help="scripted scorer JSONL (case_id/choice)")
    p.add_argument("--model-name", dest="model_name", required=True)
    p.add_argument("--edits", help="edits JSONL for term frequencies")
    p.add_argument("--out", help="write the report JSON here")
    _add_common(p)
    p.set_defaults(func=cmd_eval_mlm)

    p = sub.add_parser("compare", help="compare evaluation reports")
    p.add_argument("--reports", nargs="+", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("pipeline", help="scan -> resolve -> classify -> neutralize")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--edits", required=True)
    p.add_argument("--workdir", help="directory for intermediate files")
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except records.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
