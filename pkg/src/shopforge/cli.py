"""`forge`: one binary wiring the toolkit into an end-to-end pipeline.

Subcommands: inspect, merge, quantize, route, decode, build-dataset,
evaluate, rank, and run (the whole pipeline from one config file). Every
stage reads and writes plain files (archives, JSONL, JSON), so any stage can
be re-run in isolation.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import __version__
from .adapters import (
    LoraAdapter,
    MergePlan,
    MergeStep,
    adapter_from_archive,
    execute_merge,
    wise_ft_rescale,
)
from .archive import format_table, read_archive, write_archive
from .dataset import (
    build_dataset,
    dataset_metadata,
    emit_jsonl,
    load_esci_csv,
    load_reviews_csv,
    load_sessions_csv,
    recipe_registry,
)
from .metrics import MetricReport, evaluate_answers, rank_sum, rank_table
from .parsing import answer_to_json, parse
from .processors import default_chain_config, load_chain_config
from .prompts import PROMPT_VERSION
from .quant import QuantConfig, quantize_archive
from .report import (
    render_quant_figure,
    render_report_figures,
    write_report_json,
    write_scores_csv,
)
from .router import RULESET_VERSION, TaskType, build_prompt, load_questions, route
from .toylm import DEFAULT_CORPUS, decode_prompts

CONFIG_EXIT = 2
STAGE_EXIT = 3


class ConfigError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _require_files(stage: str, *paths):
    for p in paths:
        if p is not None and not os.path.exists(p):
            raise ConfigError(f"{stage}: file not found: {p}")


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


# ---------------------------------------------------------------- inspect


def cmd_inspect(args) -> int:
    _require_files("inspect", args.path)
    print(format_table(read_archive(args.path)))
    return 0


# ------------------------------------------------------------------ merge


def _parse_adapter_arg(spec: str) -> tuple[str, float]:
    path, sep, weight = spec.rpartition(":")
    if not sep or not path:
        return spec, 1.0
    try:
        return path, float(weight)
    except ValueError:
        # The colon belonged to the path (e.g. windows drives); weight defaults.
        return spec, 1.0


def _load_adapter(path: str) -> LoraAdapter:
    return adapter_from_archive(read_archive(path))


def cmd_merge(args) -> int:
    _require_files("merge", args.base, *[
        _parse_adapter_arg(a)[0] for a in args.adapter
    ])
    base = read_archive(args.base)
    steps = []
    for spec in args.adapter:
        path, weight = _parse_adapter_arg(spec)
        adapter = _load_adapter(path)
        if args.wise_ft is not None:
            adapter = wise_ft_rescale(adapter, args.wise_ft)
        steps.append(
            MergeStep(adapter=adapter, weight=weight, lora_scale=1.0 if args.pre_scaled else None)
        )
    merged = execute_merge(MergePlan(base=base, steps=steps))
    if args.wise_ft is not None:
        merged.metadata["wise_ft_alpha"] = repr(args.wise_ft)
    write_archive(merged, args.output)
    print(f"merged {len(steps)} adapter(s) into {args.output}")
    return 0


# --------------------------------------------------------------- quantize


def cmd_quantize(args) -> int:
    _require_files("quantize", args.input)
    config = QuantConfig(group_size=args.group_size, symmetric=args.symmetric)
    archive = read_archive(args.input)
    quantized, report = quantize_archive(archive, config)
    write_archive(quantized, args.output)
    report_path = args.report or args.output + ".report.json"
    _write_json(report, report_path)
    if args.figures:
        for path in render_quant_figure(report, args.figures):
            print(f"wrote {path}")
    print(f"quantized {args.input} -> {args.output} (error report: {report_path})")
    return 0


# ------------------------------------------------------------------ route


def cmd_route(args) -> int:
    _require_files("route", args.questions)
    questions = load_questions(args.questions)
    out = open(args.output, "w", encoding="utf-8", newline="\n") if args.output else sys.stdout
    try:
        for q in questions:
            task_type = q.task_type or route(q)
            out.write(json.dumps({"id": q.id, "task_type": task_type.value}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# ----------------------------------------------------------------- decode


def _chain_map(chain_config) -> dict[str, list[dict]]:
    """Normalize a chain config (flat list or per-task map) to a full
    per-task-type map."""
    if chain_config is None:
        return default_chain_config()
    if isinstance(chain_config, list):
        return {tt.value: chain_config for tt in TaskType}
    merged = {tt.value: [] for tt in TaskType}
    for key, stages in chain_config.items():
        if key not in merged:
            raise ConfigError(f"chain config references unknown task type {key!r}")
        merged[key] = stages
    return merged


def _decode_questions(questions, chain_map, seed, max_new, jobs, corpus):
    items = []
    routed_types = []
    for q in questions:
        task_type = q.task_type or route(q)
        routed_types.append(task_type)
        pair = build_prompt(dataclasses.replace(q, task_type=task_type))
        items.append((pair.system + "\n" + pair.user, task_type.value))
    outputs, stats = decode_prompts(
        seed, items, chain_map, max_new, corpus=corpus, jobs=jobs
    )
    return outputs, routed_types, stats


def cmd_decode(args) -> int:
    _require_files("decode", args.questions, args.chain)
    questions = load_questions(args.questions)
    chain_map = _chain_map(load_chain_config(args.chain) if args.chain else None)
    corpus = DEFAULT_CORPUS
    if args.corpus:
        _require_files("decode", args.corpus)
        with open(args.corpus, "r", encoding="utf-8") as fh:
            corpus = fh.read()
    outputs, routed_types, stats = _decode_questions(
        questions, chain_map, args.seed, args.max_new, args.jobs, corpus
    )
    with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
        for q, task_type, raw in zip(questions, routed_types, outputs):
            outcome = parse(task_type, raw)
            fh.write(
                json.dumps(
                    {
                        "id": q.id,
                        "raw": raw,
                        "parsed": answer_to_json(outcome.answer) if outcome.ok else None,
                        "failure_reason": outcome.failure_reason,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    print(
        f"decoded {stats.questions} questions in {stats.elapsed_seconds:.2f}s "
        f"({stats.questions_per_minute:.1f} q/min) -> {args.output}"
    )
    return 0


# ---------------------------------------------------------- build-dataset


def cmd_build_dataset(args) -> int:
    try:
        recipes = [int(r) for r in args.recipes.split(",") if r.strip()]
    except ValueError as exc:
        raise ConfigError(f"build-dataset: bad --recipes value: {exc}") from exc
    if not recipes:
        raise ConfigError("build-dataset: --recipes is empty")
    _require_files("build-dataset", args.esci, args.reviews, args.sessions)
    esci = load_esci_csv(args.esci) if args.esci else []
    reviews = load_reviews_csv(args.reviews) if args.reviews else []
    sessions = load_sessions_csv(args.sessions) if args.sessions else []
    samples = build_dataset(
        recipes, args.seed, esci_rows=esci, review_rows=reviews, session_rows=sessions
    )
    emit_jsonl(samples, args.output)
    _write_json(dataset_metadata(args.seed, recipes, samples), args.output + ".meta.json")
    print(f"built {len(samples)} samples -> {args.output}")
    return 0


# --------------------------------------------------------------- evaluate


def _load_raw_answers(path) -> dict[str, str]:
    answers: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                answers[str(obj["id"])] = obj["raw"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad answer record: {exc}") from exc
    return answers


def _evaluate(questions, answers, strict) -> MetricReport:
    report = evaluate_answers(questions, answers, strict=strict)
    report.metadata["prompt_version"] = PROMPT_VERSION
    return report


def cmd_evaluate(args) -> int:
    _require_files("evaluate", args.questions, args.answers)
    questions = load_questions(args.questions)
    for q in questions:
        if q.task_type is None:
            q.task_type = route(q)
    answers = _load_raw_answers(args.answers)
    report = _evaluate(questions, answers, args.strict)
    write_report_json(report, args.output)
    csv_path = os.path.splitext(args.output)[0] + ".scores.csv"
    write_scores_csv(report, questions, csv_path)
    written = [args.output, csv_path]
    if args.figures:
        written += render_report_figures(report, args.figures)
    for path in written:
        print(f"wrote {path}")
    return 0


# ------------------------------------------------------------------- rank


def cmd_rank(args) -> int:
    _require_files("rank", args.scores)
    with open(args.scores, "r", encoding="utf-8") as fh:
        systems = json.load(fh)
    if not isinstance(systems, dict) or not all(isinstance(v, dict) for v in systems.values()):
        raise ConfigError("rank: scores file must map system name -> {track: score}")
    sums = rank_sum(systems)
    result = {"rank_sum": sums, "per_track_ranks": rank_table(systems)}
    if args.output:
        _write_json(result, args.output)
    for name in sorted(sums, key=lambda n: sums[n]):
        print(f"{name}\t{sums[name]}")
    return 0


# -------------------------------------------------------------------- run


_CONFIG_KEYS = {
    "questions",
    "base",
    "adapters",
    "wise_ft",
    "quantize",
    "chain",
    "seed",
    "max_new",
    "jobs",
    "out_dir",
    "strict_parsing",
    "figures",
    "corpus",
}


def load_pipeline_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"run: config is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("run: config must be a JSON object")
    unknown = set(config) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"run: unknown config keys: {sorted(unknown)}")
    if "questions" not in config:
        raise ConfigError("run: config needs a 'questions' path")
    config.setdefault("seed", 0)
    config.setdefault("max_new", 16)
    config.setdefault("jobs", 1)
    config.setdefault("out_dir", "forge_run")
    config.setdefault("strict_parsing", False)
    config.setdefault("figures", False)
    return config


def run_pipeline(config: dict) -> tuple[MetricReport, dict]:
    """merge -> quantize (optional) -> route -> decode -> parse -> evaluate.

    Writes answers.jsonl, report.json, scores.csv and timing.json into
    out_dir. All scoring outputs are deterministic given the config; wall
    -clock throughput lives only in timing.json.
    """
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _require_files("pipeline", config["questions"], config.get("base"), config.get("corpus"))

    model_path = config.get("base")
    try:
        if model_path and config.get("adapters"):
            base = read_archive(model_path)
            steps = []
            for spec in config["adapters"]:
                _require_files("merge", spec["path"])
                adapter = _load_adapter(spec["path"])
                if config.get("wise_ft") is not None:
                    adapter = wise_ft_rescale(adapter, float(config["wise_ft"]))
                steps.append(
                    MergeStep(
                        adapter=adapter,
                        weight=float(spec.get("weight", 1.0)),
                        lora_scale=spec.get("lora_scale"),
                    )
                )
            merged = execute_merge(MergePlan(base=base, steps=steps))
            model_path = os.path.join(out_dir, "merged.safetensors")
            write_archive(merged, model_path)
    except ConfigError:
        raise
    except Exception as exc:
        raise StageError("merge", str(exc)) from exc

    try:
        if config.get("quantize") is not None and model_path:
            qspec = config["quantize"]
            qconfig = QuantConfig(
                group_size=int(qspec.get("group_size", 128)),
                symmetric=bool(qspec.get("symmetric", False)),
            )
            quantized, qreport = quantize_archive(read_archive(model_path), qconfig)
            qpath = os.path.join(out_dir, "quantized.safetensors")
            write_archive(quantized, qpath)
            _write_json(qreport, qpath + ".report.json")
    except Exception as exc:
        raise StageError("quantize", str(exc)) from exc

    try:
        questions = load_questions(config["questions"])
        for q in questions:
            if q.task_type is None:
                q.task_type = route(q)
    except Exception as exc:
        raise StageError("route", str(exc)) from exc

    try:
        chain_cfg = config.get("chain")
        if isinstance(chain_cfg, str):
            if chain_cfg != "default":
                raise ConfigError(f"run: chain must be a list, map, or 'default', got {chain_cfg!r}")
            chain_cfg = None
        chain_map = _chain_map(chain_cfg)
        corpus = DEFAULT_CORPUS
        if config.get("corpus"):
            with open(config["corpus"], "r", encoding="utf-8") as fh:
                corpus = fh.read()
        outputs, routed_types, stats = _decode_questions(
            questions, chain_map, int(config["seed"]), int(config["max_new"]),
            int(config["jobs"]), corpus,
        )
    except ConfigError:
        raise
    except Exception as exc:
        raise StageError("decode", str(exc)) from exc

    try:
        answers_path = os.path.join(out_dir, "answers.jsonl")
        raw_answers = {}
        with open(answers_path, "w", encoding="utf-8", newline="\n") as fh:
            for q, task_type, raw in zip(questions, routed_types, outputs):
                outcome = parse(task_type, raw, strict=config["strict_parsing"])
                raw_answers[q.id] = raw
                fh.write(
                    json.dumps(
                        {
                            "id": q.id,
                            "raw": raw,
                            "parsed": answer_to_json(outcome.answer) if outcome.ok else None,
                            "failure_reason": outcome.failure_reason,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
    except Exception as exc:
        raise StageError("parse", str(exc)) from exc

    try:
        report = _evaluate(questions, raw_answers, config["strict_parsing"])
        write_report_json(report, os.path.join(out_dir, "report.json"))
        write_scores_csv(report, questions, os.path.join(out_dir, "scores.csv"))
        if config["figures"]:
            render_report_figures(report, out_dir)
    except Exception as exc:
        raise StageError("evaluate", str(exc)) from exc

    timing = {
        "questions": stats.questions,
        "elapsed_seconds": stats.elapsed_seconds,
        "questions_per_minute": stats.questions_per_minute,
    }
    _write_json(timing, os.path.join(out_dir, "timing.json"))
    return report, timing


def cmd_run(args) -> int:
    _require_files("run", args.config)
    config = load_pipeline_config(args.config)
    if args.out_dir:
        config["out_dir"] = args.out_dir
    report, timing = run_pipeline(config)
    overall = (
        sum(report.per_question.values()) / len(report.per_question)
        if report.per_question
        else 0.0
    )
    print(
        f"evaluated {timing['questions']} questions at "
        f"{timing['questions_per_minute']:.1f} q/min; mean score {overall:.4f}"
    )
    print(f"outputs in {config['out_dir']}")
    return 0


# ------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forge",
        description="Adapter merging, quantization prep, constrained decoding, "
        "and evaluation for shopping-assistant pipelines.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=(
            f"forge {__version__} "
            f"(ruleset {RULESET_VERSION}, prompts {PROMPT_VERSION}, "
            f"recipes {len(recipe_registry())})"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="print an archive's tensor table")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("merge", help="fold weighted LoRA adapters into a base archive")
    p.add_argument("--base", required=True)
    p.add_argument(
        "--adapter",
        action="append",
        required=True,
        metavar="PATH[:WEIGHT]",
        help="adapter archive with optional fold weight (default 1.0); repeatable",
    )
    p.add_argument("--wise-ft", type=float, default=None, metavar="ALPHA",
                   help="rescale adapters by sqrt(ALPHA) before folding")
    p.add_argument("--pre-scaled", action="store_true",
                   help="adapter factors already include alpha/rank")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("quantize", help="group-wise int4 quantization with error report")
    p.add_argument("--group-size", type=int, default=128)
    p.add_argument("--symmetric", action="store_true")
    p.add_argument("--report", default=None, help="error report path (default <out>.report.json)")
    p.add_argument("--figures", default=None, metavar="DIR", help="render error chart into DIR")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("route", help="classify questions into task types")
    p.add_argument("questions")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("decode", help="greedy-decode questions with the toy LM")
    p.add_argument("--questions", required=True)
    p.add_argument("--chain", default=None, help="chain config JSON (default: per-task defaults)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-new", type=int, default=16)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--corpus", default=None, help="tokenizer corpus text file")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("build-dataset", help="construct training samples from seed CSVs")
    p.add_argument("--recipes", required=True, help="comma-separated recipe ids, e.g. 5,7,31")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--esci", default=None)
    p.add_argument("--reviews", default=None)
    p.add_argument("--sessions", default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("evaluate", help="score answers against gold questions")
    p.add_argument("--questions", required=True)
    p.add_argument("--answers", required=True)
    p.add_argument("--strict", action="store_true", help="strict parsing mode")
    p.add_argument("--figures", default=None, metavar="DIR", help="render figures into DIR")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rank", help="rank-sum scoring across systems")
    p.add_argument("scores", help="JSON: {system: {track: score}}")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_EXIT
    except StageError as exc:
        print(f"stage failure {exc}", file=sys.stderr)
        return STAGE_EXIT
    except Exception as exc:  # stage failures from direct subcommands
        print(f"stage failure [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return STAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
