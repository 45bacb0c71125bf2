"""Command-line entry point.

Subcommands wire configs into the library modules:

    stats            negation statistics over caption corpora
    generate         run a caption-augmentation pipeline
    build-benchmark  construct hard-negative patch triplets
    finetune         train the text tower on generated pairs
    evaluate         run a scoring protocol against a bundle
    swap-encoder     splice a fine-tuned text tower into a bundle
    make-bundle      create a small deterministic bundle checkpoint

Config precedence is CLI flag > config file section > built-in default.
Every successful run writes a manifest next to its primary output with
content digests of all inputs and outputs, so a run can be verified or
reproduced later. Errors print one machine-parsable line to stderr:
"<error-class>: <message>".
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shlex
import sys
import time
from pathlib import Path

from . import __version__


class CliError(Exception):
    def __init__(self, error_class: str, message: str):
        super().__init__(message)
        self.error_class = error_class


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(subcommand: str, argv, config: dict, inputs, outputs,
                   started: float) -> Path:
    """Manifest lands next to the first output file."""
    outputs = [str(o) for o in outputs]
    manifest = {
        "subcommand": subcommand,
        "argv": list(argv),
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {p: sha256_file(p) for p in outputs},
        "tool_version": __version__,
        "wall_clock_seconds": round(time.time() - started, 6),
    }
    path = Path(outputs[0] + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


class Resolver:
    """flag > config-file section > default."""

    def __init__(self, args: argparse.Namespace, section: str):
        self.args = vars(args)
        self.section = {}
        config_path = self.args.get("config")
        if config_path:
            if not os.path.isfile(config_path):
                raise CliError("bad-config", f"config file not found: {config_path}")
            doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
            self.section = doc.get(section, {})
        self.resolved: dict = {}

    def get(self, key: str, default=None):
        value = self.args.get(key)
        if value is None:
            value = self.section.get(key, default)
        self.resolved[key] = value
        return value


def _require_file(path, error_class="input-not-found"):
    if path is None or not os.path.isfile(path):
        raise CliError(error_class, f"file not found: {path}")
    return path


def _lexicon(spec):
    from .negation import NegationLexicon

    return NegationLexicon.parse(spec) if spec else NegationLexicon()


# -- stats ---------------------------------------------------------------------

def cmd_stats(args, argv) -> int:
    from .negation import scan_files

    started = time.time()
    res = Resolver(args, "stats")
    inputs = [_require_file(p) for p in args.input]
    fmt = res.get("format", "auto")
    lexicon = _lexicon(res.get("lexicon"))
    output = res.get("output") or f"{inputs[0]}.stats.json"

    report = scan_files(inputs, lexicon, fmt)
    doc = json.dumps(report.as_dict(), indent=2, sort_keys=True)
    Path(output).write_text(doc + "\n", encoding="utf-8")
    print(doc)
    write_manifest("stats", argv, res.resolved, inputs, [output], started)
    return 0


# -- generate --------------------------------------------------------------------

def _build_clients(res):
    from .chat import ClientConfig, HttpChatClient, StubChatClient

    cache_dir = res.get("cache_dir") or os.environ.get("NEGKIT_CACHE_DIR")
    stub_map = res.get("stub_map")
    if stub_map:
        _require_file(stub_map)
        stub = StubChatClient.from_json(stub_map)
        return stub, stub
    llm_endpoint = res.get("llm_endpoint")
    mllm_endpoint = res.get("mllm_endpoint")
    if not llm_endpoint:
        raise CliError("bad-config", "need --stub-map or --llm-endpoint")
    llm = HttpChatClient(ClientConfig(endpoint=llm_endpoint,
                                      model=res.get("llm_model", "llm"),
                                      cache_dir=cache_dir))
    mllm = llm
    if mllm_endpoint:
        mllm = HttpChatClient(ClientConfig(endpoint=mllm_endpoint,
                                           model=res.get("mllm_model", "mllm"),
                                           cache_dir=cache_dir))
    return llm, mllm


def cmd_generate(args, argv) -> int:
    from .datagen import (Pipeline1, Pipeline2, run_original_caption, read_records,
                          write_pairs)

    started = time.time()
    res = Resolver(args, "generate")
    pipeline = res.get("pipeline")
    input_path = _require_file(res.get("input"))
    output = res.get("output") or f"{input_path}.pairs.jsonl"
    seed = int(res.get("seed", 0))
    max_items = res.get("max_items")
    lexicon = _lexicon(res.get("lexicon"))

    records = list(read_records(input_path))
    if max_items is not None:
        records = records[: int(max_items)]

    if pipeline == "original":
        from .datagen import PipelineRunReport

        report = PipelineRunReport("OriginalCaption")
        pairs = run_original_caption(records, lexicon, report)
    elif pipeline == "p2":
        llm, _ = _build_clients(res)
        runner = Pipeline2(llm, lexicon)
        pairs = runner.run(records)
    else:
        llm, mllm = _build_clients(res)
        variant = "random" if pipeline == "rand-p1" else "plausible"
        vocab_path = res.get("vocabulary")
        kwargs = {}
        if vocab_path:
            kwargs["vocabulary"] = json.loads(Path(_require_file(vocab_path)).read_text())
        runner = Pipeline1(llm, mllm, variant=variant, lexicon=lexicon, seed=seed, **kwargs)
        pairs = runner.run(records)

    write_pairs(pairs, output)
    report = runner.report if pipeline != "original" else report
    report_path = f"{output}.report.json"
    Path(report_path).write_text(
        json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(report.as_dict(), sort_keys=True))
    write_manifest("generate", argv, res.resolved, [input_path],
                   [output, report_path], started)
    return 0


# -- build-benchmark ----------------------------------------------------------------

def cmd_build_benchmark(args, argv) -> int:
    from .triplets import build, load_annotations, write_triplets

    started = time.time()
    res = Resolver(args, "build_benchmark")
    annotations_path = _require_file(res.get("annotations"))
    output = res.get("output") or f"{annotations_path}.triplets.jsonl"
    min_dim = int(res.get("min_dim", 100))
    lexicon = _lexicon(res.get("lexicon"))

    triplets = build(load_annotations(annotations_path), lexicon, min_dim)
    count = write_triplets(triplets, output)
    print(json.dumps({"triplets": count, "min_dim": min_dim}))
    write_manifest("build-benchmark", argv, res.resolved, [annotations_path],
                   [output], started)
    return 0


# -- finetune --------------------------------------------------------------------------

def cmd_finetune(args, argv) -> int:
    from .encoders import load_bundle
    from .finetune import (ARCH_BATCH_SIZES, DataConfig, TrainConfig, assemble,
                           train)

    started = time.time()
    res = Resolver(args, "finetune")
    pairs_files = [_require_file(p) for p in args.pairs]
    bundle_dir = res.get("bundle")
    if not bundle_dir or not os.path.isdir(bundle_dir):
        raise CliError("bundle-not-found", f"no bundle directory at {bundle_dir}")
    out_dir = Path(res.get("output_dir") or "finetune-out")
    out_dir.mkdir(parents=True, exist_ok=True)

    sources = tuple((res.get("sources") or "P1,P2").split(","))
    data_config = DataConfig(sources=sources, split_seed=int(res.get("split_seed", 0)))
    arch = res.get("arch")
    batch_size = res.get("batch_size")
    if batch_size is None:
        batch_size = ARCH_BATCH_SIZES.get(arch, 512)
    train_config = TrainConfig(
        learning_rate=float(res.get("lr", 1e-6)),
        batch_size=int(batch_size),
        epochs=int(res.get("epochs", 5)),
        seed=int(res.get("seed", 0)),
    )

    bundle = load_bundle(bundle_dir)
    train_set, val_set = assemble(pairs_files, data_config)
    result = train(bundle, train_set, val_set, train_config, out_dir=out_dir)
    summary = {
        "train_examples": len(train_set),
        "val_examples": len(val_set),
        "best_epoch": result.best_epoch,
        "checkpoint": str(result.checkpoint_dir),
        "vision_frozen": result.vision_digest_before == result.vision_digest_after,
    }
    print(json.dumps(summary, sort_keys=True))
    outputs = [str(result.checkpoint_dir / "manifest.json"),
               str(result.checkpoint_dir / "weights.pt"),
               str(out_dir / "train_log.jsonl")]
    write_manifest("finetune", argv, res.resolved, pairs_files, outputs, started)
    return 0


# -- evaluate ---------------------------------------------------------------------------

def _load_jsonl(path):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def cmd_evaluate(args, argv) -> int:
    from . import harness
    from .encoders import EncoderError, load_bundle

    started = time.time()
    res = Resolver(args, "evaluate")
    protocol = res.get("protocol")
    output = res.get("output") or f"report-{protocol}.json"

    needs_bundle = protocol in ("negrefcocog", "existence", "attributes",
                                "zeroshot", "recall")
    bundle = None
    if needs_bundle:
        bundle_dir = res.get("bundle")
        try:
            bundle = load_bundle(bundle_dir) if bundle_dir else None
        except EncoderError as exc:
            raise CliError("bundle-not-found", str(exc))
        if bundle is None:
            raise CliError("bundle-not-found", "no --bundle given")

    inputs = []
    if protocol == "negrefcocog":
        from .triplets import read_triplets

        path = _require_file(res.get("input"))
        inputs.append(path)
        report = harness.score_negrefcocog(list(read_triplets(path)), bundle,
                                           images_root=res.get("images_root"))
    elif protocol == "existence":
        path = _require_file(res.get("input"))
        inputs.append(path)
        report = harness.score_existence(_load_jsonl(path), bundle)
    elif protocol == "attributes":
        path = _require_file(res.get("input"))
        inputs.append(path)
        table_path = res.get("prompt_table")
        rows = (json.loads(Path(_require_file(table_path)).read_text())["rows"]
                if table_path else harness.attribute_prompt_table())
        report = harness.balanced_accuracy_attributes(_load_jsonl(path), rows, bundle)
    elif protocol == "zeroshot":
        path = _require_file(res.get("input"))
        classes_path = _require_file(res.get("classes"))
        inputs += [path, classes_path]
        class_names = [line.strip() for line in
                       Path(classes_path).read_text(encoding="utf-8").splitlines()
                       if line.strip()]
        report = harness.zero_shot_classify(
            _load_jsonl(path), class_names, bundle,
            template=res.get("template", "a photo of a {}"))
    elif protocol == "recall":
        queries_path = _require_file(res.get("input"))
        images_path = _require_file(res.get("images"))
        inputs += [queries_path, images_path]
        report = harness.recall_at_k(_load_jsonl(queries_path), _load_jsonl(images_path),
                                     bundle, k=int(res.get("k", 5)))
    elif protocol == "negscore":
        prompts_path = res.get("input")
        if prompts_path:
            inputs.append(_require_file(prompts_path))
            rows = _load_jsonl(prompts_path)
        else:
            rows = harness.negation_prompt_table()
        generator = harness.command_generator(shlex.split(res.get("generator_cmd") or ""))
        if not res.get("generator_cmd"):
            raise CliError("bad-config", "negscore needs --generator-cmd")
        mllm, _ = _build_clients(res)
        seeds = tuple(range(int(res.get("seeds", 5))))
        report = harness.neg_score(rows, generator, mllm, seeds=seeds)
    elif protocol == "absence":
        path = _require_file(res.get("input"))
        inputs.append(path)
        if not res.get("generator_cmd") or not res.get("detector_cmd"):
            raise CliError("bad-config", "absence needs --generator-cmd and --detector-cmd")
        generator = harness.command_generator(shlex.split(res.get("generator_cmd")))
        detector = harness.command_detector(shlex.split(res.get("detector_cmd")))
        report = harness.score_absence(_load_jsonl(path), generator, detector)
    elif protocol == "segmentation":
        path = _require_file(res.get("input"))
        inputs.append(path)
        report = harness.score_segmentation(_load_jsonl(path),
                                            threshold=float(res.get("threshold", 0.3)))
    else:
        raise CliError("bad-config", f"unknown protocol: {protocol}")

    report.save(output)
    print(json.dumps({"protocol": report.protocol, "aggregate": report.aggregate,
                      "items": len(report.items), "excluded": report.excluded_count},
                     sort_keys=True))
    write_manifest("evaluate", argv, res.resolved, inputs, [output], started)
    return 0


# -- swap-encoder -----------------------------------------------------------------------

def cmd_swap_encoder(args, argv) -> int:
    from .encoders import (ArchitectureMismatch, EncoderError, load_bundle,
                           save_checkpoint, swap_text_tower)

    started = time.time()
    res = Resolver(args, "swap_encoder")
    bundle_dir = res.get("bundle")
    tower_dir = res.get("text_tower")
    output = res.get("output") or "swapped-bundle"
    try:
        bundle = load_bundle(bundle_dir)
        swapped = swap_text_tower(bundle, tower_dir)
    except ArchitectureMismatch as exc:
        raise CliError("architecture-mismatch", str(exc))
    except EncoderError as exc:
        raise CliError("bundle-not-found", str(exc))
    save_checkpoint(swapped, output, component="full")
    print(json.dumps({"output": str(output), "architecture": swapped.architecture}))
    inputs = [Path(bundle_dir) / "weights.pt", Path(tower_dir) / "weights.pt"]
    outputs = [str(Path(output) / "manifest.json"), str(Path(output) / "weights.pt")]
    write_manifest("swap-encoder", argv, res.resolved, inputs, outputs, started)
    return 0


# -- make-bundle -------------------------------------------------------------------------

def cmd_make_bundle(args, argv) -> int:
    from .encoders import build_toy_bundle, save_checkpoint

    started = time.time()
    res = Resolver(args, "make_bundle")
    output = res.get("output") or "bundle"
    bundle = build_toy_bundle(
        embed_dim=int(res.get("embed_dim", 32)),
        feat_dim=int(res.get("feat_dim", 128)),
        image_size=int(res.get("image_size", 16)),
        logit_scale=float(res.get("logit_scale", 20.0)),
        seed=int(res.get("seed", 0)),
    )
    save_checkpoint(bundle, output, component="full")
    print(json.dumps({"output": str(output), "architecture": bundle.architecture}))
    outputs = [str(Path(output) / "manifest.json"), str(Path(output) / "weights.pt")]
    write_manifest("make-bundle", argv, res.resolved, [], outputs, started)
    return 0


# -- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="negkit", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file with per-subcommand sections")

    p = sub.add_parser("stats", help="negation statistics over caption corpora")
    common(p)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--format", choices=["auto", "jsonl", "tsv"])
    p.add_argument("--lexicon", help="comma-separated negation terms")
    p.add_argument("--output")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("generate", help="run a caption-augmentation pipeline")
    common(p)
    p.add_argument("--pipeline", choices=["p1", "p2", "rand-p1", "original"],
                   required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--stub-map", dest="stub_map")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-items", dest="max_items", type=int)
    p.add_argument("--lexicon")
    p.add_argument("--vocabulary", help="JSON list of object names for rand-p1")
    p.add_argument("--llm-endpoint", dest="llm_endpoint")
    p.add_argument("--llm-model", dest="llm_model")
    p.add_argument("--mllm-endpoint", dest="mllm_endpoint")
    p.add_argument("--mllm-model", dest="mllm_model")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("build-benchmark", help="construct hard-negative patch triplets")
    common(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--output")
    p.add_argument("--min-dim", dest="min_dim", type=int)
    p.add_argument("--lexicon")
    p.set_defaults(func=cmd_build_benchmark)

    p = sub.add_parser("finetune", help="train the text tower on generated pairs")
    common(p)
    p.add_argument("--pairs", nargs="+", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--sources")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--arch", help="architecture name for the batch-size table")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="run a scoring protocol")
    common(p)
    p.add_argument("--protocol", required=True,
                   choices=["negrefcocog", "existence", "attributes", "zeroshot",
                            "recall", "negscore", "absence", "segmentation"])
    p.add_argument("--bundle")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--images-root", dest="images_root")
    p.add_argument("--images", help="image pool JSONL for recall")
    p.add_argument("--classes", help="class-name file for zeroshot")
    p.add_argument("--template")
    p.add_argument("--prompt-table", dest="prompt_table")
    p.add_argument("--k", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--generator-cmd", dest="generator_cmd")
    p.add_argument("--detector-cmd", dest="detector_cmd")
    p.add_argument("--stub-map", dest="stub_map")
    p.add_argument("--llm-endpoint", dest="llm_endpoint")
    p.add_argument("--llm-model", dest="llm_model")
    p.add_argument("--mllm-endpoint", dest="mllm_endpoint")
    p.add_argument("--mllm-model", dest="mllm_model")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("swap-encoder", help="splice a text tower into a bundle")
    common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--text-tower", dest="text_tower", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_swap_encoder)

    p = sub.add_parser("make-bundle", help="create a toy bundle checkpoint")
    common(p)
    p.add_argument("--output")
    p.add_argument("--seed", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--feat-dim", dest="feat_dim", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--logit-scale", dest="logit_scale", type=float)
    p.set_defaults(func=cmd_make_bundle)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except CliError as exc:
        print(f"{exc.error_class}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"input-not-found: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - single-line error contract
        print(f"internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
