"""Command-line entry point: ``cityfm <subcommand> ...``.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from cityfm import __version__
from cityfm.config import FIELD_HELP, TrainingConfig
from cityfm.corpus import Corpus, CorpusError, dumps_jsonl, dumps_manifest, parse_jsonl, parse_osm_xml, scrub_pii

log = logging.getLogger("cityfm")

SUBCOMMANDS = ("preprocess", "pretrain", "embed", "eval-speed", "eval-buildings", "eval-regions", "analyze-sim",
               "synth-city")


class UsageError(Exception):
    pass


_FIELD_TYPES = {"float": float, "int": int}


def _flag(name: str) -> str:
    return "--" + name.rstrip("_").replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training configuration")
    defaults = TrainingConfig()
    for f in dataclasses.fields(TrainingConfig):
        if f.name == "seed":
            continue
        flags = [_flag(f.name)]
        if f.name == "max_steps":
            flags.append("--steps")
        g.add_argument(*flags, dest=f.name, metavar=f.name.rstrip("_").upper(), type=_FIELD_TYPES[str(f.type)],
                       default=getattr(defaults, f.name), help=f"{FIELD_HELP[f.name]} (default: %(default)s)")


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (default: $CITYFM_SEED, else 0)")


def _add_threads(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=1, help="worker threads (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cityfm", description="Self-supervised multimodal map-entity embeddings.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("preprocess", help="parse OSM XML or JSONL, scrub PII, write a canonical corpus",
                       formatter_class=fmt)
    p.add_argument("--input", required=True, help="OSM XML (.osm/.xml) or entity JSONL file")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth-city", help="generate the synthetic benchmark city", formatter_class=fmt)
    _add_seed(p)
    p.add_argument("--n-roads", type=int, default=220, help="road segments")
    p.add_argument("--n-pois", type=int, default=660, help="tagged points of interest")
    p.add_argument("--n-buildings", type=int, default=1500, help="building footprints")
    p.add_argument("--n-regions", type=int, default=100, help="density regions")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("pretrain", help="pre-train the encoders; writes checkpoint and loss curve")
    p.add_argument("--corpus", required=True, help="corpus directory or JSONL file")
    p.add_argument("--out", required=True, help="output directory")
    _add_seed(p)
    _add_threads(p)
    _add_config_flags(p)

    p = sub.add_parser("embed", help="export entity embeddings", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True, help="corpus directory or JSONL file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=("jsonl", "binary", "both"), default="both")
    _add_threads(p)

    for name, table, flag, what in (
        ("eval-speed", "speeds", "--speeds", "CSV segment_id,speed_mph[,n_measurements]"),
        ("eval-buildings", "labels", "--labels", "CSV way_id,class"),
        ("eval-regions", "density", "--density", "CSV region_id,wkt_polygon,density_kppl"),
    ):
        p = sub.add_parser(name, help=f"probe evaluation against {table}", formatter_class=fmt)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--corpus", required=True, help="corpus directory or JSONL file")
        p.add_argument(flag, dest="table", required=True, help=what)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--runs", type=int, default=10, help="independent probe runs")
        _add_seed(p)

    p = sub.add_parser("analyze-sim", help="tag cosine-similarity table and SVG chart", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", required=True, help="query tags as key=value[;key=value]")
    p.add_argument("--candidates", default=None,
                   help="file with one key=value[;key=value] tag set per line (default: POI categories of --corpus)")
    p.add_argument("--corpus", default=None, help="corpus used to list candidate categories")
    p.add_argument("--top", type=int, default=None, help="rows kept including the query row")
    p.add_argument("--out", required=True, help="output directory")
    return parser


# ------------------------------------------------------------------ helpers


def resolve_seed(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("CITYFM_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"CITYFM_SEED must be an integer, got {env!r}") from exc


def load_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    if path.is_dir():
        path = path / "corpus.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"corpus not found: {path}")
    return parse_jsonl(path.read_bytes())


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_resolved(out: Path, command: str, args: argparse.Namespace, config: TrainingConfig | None = None,
                   seed: int | None = None) -> None:
    skip = {"command", "verbose", *(f.name for f in dataclasses.fields(TrainingConfig))}
    payload = {
        "subcommand": command,
        "version": __version__,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k not in skip},
        "seed": seed,
        "config": config.to_dict() if config else None,
    }
    (out / "resolved_config.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def parse_tag_set(text: str) -> dict[str, str]:
    tags = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise UsageError(f"tag {part!r} is not key=value")
        k, v = part.split("=", 1)
        tags[k.strip()] = v.strip()
    if not tags:
        raise UsageError(f"empty tag set {text!r}")
    return tags


# -------------------------------------------------------------- subcommands


def cmd_preprocess(args) -> None:
    src = Path(args.input)
    data = src.read_bytes()
    corpus = parse_jsonl(data) if src.suffix in (".jsonl", ".json") else parse_osm_xml(data)
    corpus = scrub_pii(corpus)
    out = _out_dir(args.out)
    (out / "corpus.jsonl").write_bytes(dumps_jsonl(corpus))
    (out / "manifest.json").write_bytes(dumps_manifest(corpus.manifest))
    write_resolved(out, "preprocess", args)


def cmd_synth_city(args) -> None:
    from cityfm.downstream.synth import synth_city, write_city

    seed = resolve_seed(args.seed)
    corpus, truth = synth_city(seed, args.n_roads, args.n_pois, args.n_buildings, args.n_regions)
    out = _out_dir(args.out)
    write_city(corpus, truth, out)
    write_resolved(out, "synth-city", args, seed=seed)


def cmd_pretrain(args) -> None:
    from cityfm.pretrain.trainer import pretrain, write_loss_curve

    seed = resolve_seed(args.seed)
    values = {f.name: getattr(args, f.name) for f in dataclasses.fields(TrainingConfig) if f.name != "seed"}
    try:
        config = TrainingConfig(seed=seed, **values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    corpus = load_corpus(args.corpus)
    out = _out_dir(args.out)

    def progress(row):
        if row["step"] % 100 == 0:
            log.info("step %d loss %.4f", row["step"], row["loss_total"])

    result = pretrain(corpus, config, threads=args.threads, progress=progress)
    result.checkpoint.save(out / "checkpoint.npz")
    write_loss_curve(result.curve, out / "loss_curve.csv")
    write_resolved(out, "pretrain", args, config=config, seed=seed)
    log.info("trained %d steps in %.1fs", len(result.curve), result.seconds)


def cmd_embed(args) -> None:
    from cityfm.downstream.embed import Embedder, write_binary, write_jsonl
    from cityfm.neural.checkpoint import ModelCheckpoint

    ckpt = ModelCheckpoint.load(args.checkpoint)
    corpus = load_corpus(args.corpus)
    emb = Embedder(ckpt, corpus)
    ids = emb.embeddable_ids()
    # warm the caches in bulk, then assemble records from read-only state
    emb.text([i for i in ids if corpus[i].tags])
    polys = [i for i in ids if corpus[i].is_polygon and not corpus[i].is_road]
    if polys and emb.max_area:
        emb.visual(polys)
    for g in emb.groups.values():
        emb.text(list(g.member_ids))
    emb.empty_text
    chunks = [ids[i:i + 256] for i in range(0, len(ids), 256)]
    with ThreadPoolExecutor(max_workers=max(args.threads, 1)) as pool:
        records = [r for part in pool.map(emb.records, chunks) for r in part]
    out = _out_dir(args.out)
    if args.format in ("jsonl", "both"):
        write_jsonl(records, out / "embeddings.jsonl")
    if args.format in ("binary", "both"):
        write_binary(records, out / "embeddings.bin")
    write_resolved(out, "embed", args)


def _eval(args, task: str) -> None:
    from cityfm.downstream import tasks
    from cityfm.neural.checkpoint import ModelCheckpoint

    seed = resolve_seed(args.seed)
    ckpt = ModelCheckpoint.load(args.checkpoint)
    corpus = load_corpus(args.corpus)
    if task == "speed":
        report = tasks.eval_speed(ckpt, corpus, tasks.read_speeds(args.table), n_runs=args.runs, seed=seed)
    elif task == "buildings":
        report = tasks.eval_buildings(ckpt, corpus, tasks.read_labels(args.table), n_runs=args.runs, seed=seed)
    else:
        report = tasks.eval_regions(ckpt, corpus, tasks.read_density(args.table), n_runs=args.runs, seed=seed)
    out = _out_dir(args.out)
    (out / f"{task}_metrics.csv").write_text(report.to_csv())
    if report.per_class_f1:
        (out / f"{task}_per_class_f1.csv").write_text(report.per_class_csv())
    (out / f"{task}_metrics.json").write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    write_resolved(out, f"eval-{task}", args, seed=seed)
    print(report.to_csv(), end="")


def cmd_analyze_sim(args) -> None:
    from cityfm.downstream.analysis import bar_chart_svg, cosine_table, poi_categories, table_csv, tag_label
    from cityfm.neural.checkpoint import ModelCheckpoint

    query = parse_tag_set(args.query)
    if args.candidates:
        lines = Path(args.candidates).read_text(encoding="utf-8").splitlines()
        candidates = [parse_tag_set(line) for line in lines if line.strip() and not line.startswith("#")]
    elif args.corpus:
        candidates = [parse_tag_set(c) for c in poi_categories(load_corpus(args.corpus))]
    else:
        raise UsageError("analyze-sim needs --candidates or --corpus")
    ckpt = ModelCheckpoint.load(args.checkpoint)
    rows = cosine_table(ckpt, query, candidates, args.top)
    out = _out_dir(args.out)
    (out / "similarity.csv").write_text(table_csv(rows, query))
    chart = bar_chart_svg([(tag_label(t), s) for t, s in rows], title=f"cosine similarity to {tag_label(query)}")
    (out / "similarity.svg").write_text(chart)
    write_resolved(out, "analyze-sim", args)


HANDLERS = {
    "preprocess": cmd_preprocess,
    "synth-city": cmd_synth_city,
    "pretrain": cmd_pretrain,
    "embed": cmd_embed,
    "eval-speed": lambda a: _eval(a, "speed"),
    "eval-buildings": lambda a: _eval(a, "buildings"),
    "eval-regions": lambda a: _eval(a, "regions"),
    "analyze-sim": cmd_analyze_sim,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code) if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        HANDLERS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cityfm: error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, ValueError, KeyError, OSError, FloatingPointError) as exc:
        print(f"cityfm: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
