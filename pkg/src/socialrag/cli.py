"""Command-line entry point: ``socialrag {ingest,build-index,query,eval}``.

Machine-readable JSON goes to ``--output`` when given, otherwise to stdout;
human-readable text and diagnostics then go to stderr so stdout stays valid
JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, time as dtime, timezone
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .corpus import CorpusFilter, CorpusFormatError, ingest_file, load_corpus
from .evalstats import ValidationError, build_report, format_report_table, read_records_csv, report_json
from .index import FieldConfig, SearchIndexError, build_index, load_index, save_index
from .llm import BackendConfig, HttpBackend, LLMError, MockBackend, MockScript
from .pipeline import PipelineConfig, PipelineError, answer_query, load_templates

logger = logging.getLogger("socialrag")

BOOLEAN_KEYS = {"keep_deleted", "verbose"}


class CommandError(Exception):
    pass


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment line."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CommandError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def parse_time(value: str, end: bool = False) -> int:
    """Epoch seconds, or an ISO date/datetime (UTC). A bare ``--to`` date covers the whole day."""
    try:
        return int(value)
    except ValueError:
        pass
    try:
        if len(value) == 10:
            day = datetime.fromisoformat(value).date()
            moment = datetime.combine(day, dtime.max if end else dtime.min, tzinfo=timezone.utc)
        else:
            moment = datetime.fromisoformat(value)
            if moment.tzinfo is None:
                moment = moment.replace(tzinfo=timezone.utc)
    except ValueError:
        raise CommandError(f"not an epoch timestamp or ISO date: {value!r}") from None
    return int(moment.timestamp())


def _time_range(args) -> Optional[tuple[int, int]]:
    if args.from_ is None and args.to is None:
        return None
    start = parse_time(args.from_) if args.from_ is not None else 0
    end = parse_time(args.to, end=True) if args.to is not None else 2**63 - 1
    if start > end:
        raise CommandError("--from is after --to")
    return start, end


def _write_json(text: str, output: Optional[str]) -> None:
    if output:
        path = Path(output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")
        sys.stdout.flush()


def _human_stream(output: Optional[str]):
    return sys.stdout if output else sys.stderr


def cmd_ingest(args) -> int:
    if not args.output:
        raise CommandError("ingest needs a destination directory (--output or corpus= in the config)")
    keywords = [k.strip() for k in (args.keywords or "").split(",") if k.strip()]
    filt = CorpusFilter(keywords=keywords, time_range=_time_range(args), drop_deleted=not args.keep_deleted)
    _, stats = ingest_file(args.input, filt, args.output)
    print(json.dumps({"corpus": str(args.output), **stats.to_dict()}, sort_keys=True))
    return 0


def cmd_build_index(args) -> int:
    if not args.corpus:
        raise CommandError("build-index needs --corpus")
    if not args.output:
        raise CommandError("build-index needs a destination directory (--output or index= in the config)")
    corpus = load_corpus(args.corpus)
    fields = (FieldConfig("title", args.title_weight, args.title_b), FieldConfig("body", args.body_weight, args.body_b))
    index = build_index(corpus, fields, args.k1)
    save_index(index, args.output)
    print(json.dumps({"index": str(args.output), "documents": index.N, "terms": len(index.postings)}, sort_keys=True))
    return 0


def _backend(args):
    if args.backend == "mock":
        if args.mock_script:
            script = MockScript.load(args.mock_script)
        else:
            script = MockScript.from_dict(
                json.loads((resources.files("socialrag") / "data" / "mock_script.json").read_text(encoding="utf-8"))
            )
        return MockBackend(script)
    config = BackendConfig(
        base_url=args.base_url,
        api_key_env=args.api_key_env,
        timeout=args.timeout,
        max_retries=args.max_retries,
        backoff_base=args.backoff_base,
        max_in_flight=args.max_parallel,
    )
    return HttpBackend(config)


def _read_batch(path: str) -> list[tuple[str, str]]:
    if path == "table1":
        text = (resources.files("socialrag") / "data" / "table1_queries.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    queries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#") or line.startswith("query_id\t"):
            continue
        if "\t" in line:
            qid, query = line.split("\t", 1)
        else:
            qid, query = str(lineno), line
        queries.append((qid.strip(), query.strip()))
    return queries


def cmd_query(args) -> int:
    if not args.index:
        raise CommandError("query needs --index")
    if args.batch is None and not args.query:
        raise CommandError("give a query or --batch FILE")
    index = load_index(args.index)
    templates = load_templates(args.templates)
    config = PipelineConfig(
        k=args.k,
        segment_budget=args.segment_budget,
        layer2_budget=args.layer2_budget,
        no_answer_sentinel=args.sentinel,
        max_parallel=args.max_parallel,
        model_id=args.model,
        temperature=args.temperature,
        layer1_max_tokens=args.layer1_max_tokens,
        layer2_max_tokens=args.layer2_max_tokens,
    )
    time_range = _time_range(args)
    backend = _backend(args)
    human = _human_stream(args.output)

    queries = _read_batch(args.batch) if args.batch is not None else [("1", " ".join(args.query))]
    results = []
    try:
        for qid, query in queries:
            bundle = answer_query(index, backend, config, templates, query, time_range)
            results.append((qid, bundle))
            print(f"[{qid}] {query}\n  status: {bundle.status}", file=human)
            if bundle.final_summary:
                print("  " + bundle.final_summary.replace("\n", "\n  "), file=human)
    except PipelineError as e:
        logger.error("query %r failed: %s (%d layer-1 summaries completed)", e.bundle.query, e, len(e.bundle.layer1))
        return 1
    finally:
        if isinstance(backend, HttpBackend):
            backend.close()

    if args.batch is not None:
        doc = {"results": [{"query_id": qid, **b.to_dict()} for qid, b in results]}
        _write_json(json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True), args.output)
    else:
        _write_json(results[0][1].to_json(), args.output)
    return 0


def cmd_eval(args) -> int:
    records = read_records_csv(args.csv)
    texts = None
    if args.texts:
        texts = json.loads(Path(args.texts).read_text(encoding="utf-8"))
    report = build_report(records, texts)
    _write_json(report_json(report), args.output)
    _human_stream(args.output).write(format_report_table(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; command-line flags take precedence")
    common.add_argument("--output", help="destination file or directory for the command's result")
    common.add_argument("-v", "--verbose", action="store_true", help="log debug messages to stderr")

    parser = argparse.ArgumentParser(prog="socialrag", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def time_flags(p):
        p.add_argument("--from", dest="from_", metavar="WHEN", help="start of time range (epoch seconds or ISO date)")
        p.add_argument("--to", metavar="WHEN", help="end of time range, inclusive")

    p = sub.add_parser("ingest", parents=[common], help="filter a newline-delimited JSON dump into a corpus store")
    p.add_argument("input", help="dump file, one JSON record per line")
    p.add_argument("--keywords", help="comma-separated keywords (word-boundary, case-insensitive)")
    p.add_argument("--keep-deleted", action="store_true", help="keep posts marked deleted or removed")
    time_flags(p)
    p.set_defaults(func=cmd_ingest, config_aliases={"output": "corpus"})

    p = sub.add_parser("build-index", parents=[common], help="build a BM25F index from a corpus store")
    p.add_argument("--corpus", help="corpus store directory")
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--title-weight", type=float, default=1.0)
    p.add_argument("--body-weight", type=float, default=1.0)
    p.add_argument("--title-b", type=float, default=0.75)
    p.add_argument("--body-b", type=float, default=0.75)
    p.set_defaults(func=cmd_build_index, config_aliases={"output": "index"})

    p = sub.add_parser("query", parents=[common], help="answer a query with the two-layer pipeline")
    p.add_argument("query", nargs="*", help="question text")
    p.add_argument("--batch", nargs="?", const="table1", metavar="FILE",
                   help="run every query in FILE (tab-separated id and query); without FILE, the 20 built-in queries")
    p.add_argument("--index", help="index directory")
    p.add_argument("--templates", help="directory holding layer1.txt and layer2.txt")
    p.add_argument("--k", type=int, default=50, help="posts retrieved per query (default 50)")
    time_flags(p)
    p.add_argument("--backend", choices=("http", "mock"), default="mock")
    p.add_argument("--mock-script", help="JSON rules for the mock backend")
    p.add_argument("--segment-budget", type=int, default=512)
    p.add_argument("--layer2-budget", type=int, default=2048)
    p.add_argument("--sentinel", default="NO ANSWER FOUND")
    p.add_argument("--max-parallel", type=int, default=4)
    p.add_argument("--model", default="default")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--layer1-max-tokens", type=int, default=256)
    p.add_argument("--layer2-max-tokens", type=int, default=512)
    p.add_argument("--base-url", default="http://localhost:8000")
    p.add_argument("--api-key-env", default="SOCIALRAG_API_KEY", help="environment variable holding the API key")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--backoff-base", type=float, default=1.0)
    p.set_defaults(func=cmd_query, config_aliases={})

    p = sub.add_parser("eval", parents=[common], help="statistics report from rater scores")
    p.add_argument("csv", help="CSV with header query_id,model_id,rater_id,criterion,score")
    p.add_argument("--texts", help="JSON {kind: {model: [text, ...]}} for readability and token statistics")
    p.set_defaults(func=cmd_eval, config_aliases={})
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = read_config_file(args.config)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    aliases = {alias: dest for dest, alias in args.config_aliases.items()}
    defaults = {}
    for key, value in values.items():
        dest = aliases.get(key, "from_" if key == "from" else key)
        if dest in known:
            defaults[dest] = value.lower() in ("1", "true", "yes", "on") if dest in BOOLEAN_KEYS else value
    subparser.set_defaults(**defaults)
    # re-parse so flags override the config values and string defaults get type-converted
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except CommandError as e:
        print(f"socialrag: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"socialrag: error: cannot read config: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (CommandError, OSError, CorpusFormatError, SearchIndexError, ValidationError, LLMError, ValueError) as e:
        print(f"socialrag {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
