"""Command-line orchestration: validate, classify, fidelity, prompts.

Runs are configured by a TOML file with one flat section per subcommand;
every section field can be overridden by a CLI flag of the same name.
Reports are written to the output directory; stdout carries a one-line
summary. Exit codes: 0 success, 1 data violation, 2 usage or I/O error.
FGVD_EVAL_THREADS caps internal worker counts (0 = auto); any worker count
produces byte-identical reports.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import corpus as corpus_mod
from . import fidelity as fidelity_mod
from . import icl as icl_mod
from . import trac as trac_mod
from ._parallel import map_chunks
from .corpus import CorpusError, load_corpus, load_pair_manifest, resolve_pair_paths, split_view

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad configuration or arguments (exit code 2)."""


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"path not found: {p}")
    with open(p, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"invalid TOML in {p}: {exc}")


def _settings(args, command: str, overrides: dict) -> dict:
    """Config section for the subcommand, overlaid with non-None CLI flags."""
    config = _load_config(args.config)
    section = config.get(command, {})
    if not isinstance(section, dict):
        raise UsageError(f"config section [{command}] must be a table")
    merged = dict(section)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def _require(settings: dict, key: str, command: str):
    if key not in settings or settings[key] in (None, ""):
        raise UsageError(f"'{key}' is required for {command} "
                         f"(config [{command}] or --{key.replace('_', '-')})")
    return settings[key]


def _out_dir(settings: dict) -> Path:
    out = Path(settings.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- validate ---------------------------------------------------------------

def _detect_kind(path: Path) -> str:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        obj = json.loads(first) if first.strip() else None
    except json.JSONDecodeError:
        obj = None
    if isinstance(obj, dict):
        if "dimension" in obj and "class_list" in obj:
            return "corpus"
        if "original_path" in obj:
            return "pairs"
        if sorted(obj) == ["id", "vector"]:
            return "features"
    return "corpus"  # corpus scanner reports the precise violation


_PATH_KEYS = frozenset({
    "corpus", "support", "tests", "pool", "queries", "pairs",
    "image_vectors", "text_vectors", "reconstructed_image_vectors",
    "original_features", "reconstructed_features",
})


def _referenced_files(config: dict) -> list[str]:
    """Every data file a config names, in first-appearance order."""
    found: list[str] = []

    def walk(obj):
        if isinstance(obj, dict):
            for key, value in obj.items():
                if key in _PATH_KEYS and isinstance(value, str) and value:
                    if value not in found:
                        found.append(value)
                else:
                    walk(value)
        elif isinstance(obj, list):
            for entry in obj:
                walk(entry)

    walk(config)
    return found


def cmd_validate(args) -> int:
    settings = _settings(args, "validate", {"files": args.files or None})
    files = settings.get("files", [])
    if isinstance(files, str):
        files = [files]
    if not files and args.config:
        files = _referenced_files(_load_config(args.config))
    if not files:
        raise UsageError("no files to validate (config [validate].files or positional args)")
    total = 0
    for name in files:
        path = Path(name)
        if not path.exists():
            raise FileNotFoundError(f"path not found: {path}")
        kind = _detect_kind(path)
        if kind == "pairs":
            violations = corpus_mod.scan_pair_manifest(path, check_images=True)
        elif kind == "features":
            violations = fidelity_mod.scan_feature_file(path)
        else:
            violations = corpus_mod.scan_corpus(path)
        for line, message in violations:
            print(f"{path}:{line}: {message}")
        total += len(violations)
    print(f"{total} violations")
    return EXIT_OK if total == 0 else EXIT_DATA


# --- classify ----------------------------------------------------------------

def _parse_methods(raw) -> list[str]:
    if raw is None or raw == "all":
        return list(trac_mod.METHODS)
    if isinstance(raw, str):
        names = [m.strip() for m in raw.split(",") if m.strip()]
    else:
        names = list(raw)
    for name in names:
        if name not in trac_mod.METHODS:
            raise UsageError(f"unknown method '{name}' (expected {trac_mod.METHODS})")
    return names


def _parse_k_range(raw: str) -> list[int]:
    try:
        lo, hi = raw.split(":")
        lo, hi = int(lo), int(hi)
    except ValueError:
        raise UsageError(f"--k-range must be 'A:B', got '{raw}'")
    if lo < 1 or hi < lo:
        raise UsageError(f"invalid k range {lo}:{hi}")
    return list(range(lo, hi + 1))


def _split_records(path, split: str):
    _, records = load_corpus(path)
    records = split_view(records, split)
    if not records:
        raise ValueError(f"no {split} records in {path}")
    return records


def _outcome_json(outcome: trac_mod.ClassificationOutcome) -> str:
    """Deterministic report serialization; similarities carry 6 decimals."""
    item_lines = []
    for it in outcome.per_item:
        neighbors = ",".join(
            '{"id":%s,"sim":%.6f}' % (json.dumps(nid, ensure_ascii=False), sim)
            for nid, sim in zip(it.neighbor_ids, it.neighbor_sims))
        item_lines.append(
            '    {"id":%s,"y":%s,"y_hat":%s,"neighbors":[%s]}' % (
                json.dumps(it.id, ensure_ascii=False),
                json.dumps(it.true_label, ensure_ascii=False),
                json.dumps(it.predicted_label, ensure_ascii=False),
                neighbors))
    return "\n".join([
        "{",
        f'  "method": {json.dumps(outcome.method)},',
        f'  "k": {json.dumps(outcome.k)},',
        f'  "accuracy": {json.dumps(outcome.accuracy)},',
        '  "items": [',
        ",\n".join(item_lines),
        "  ]",
        "}",
    ]) + "\n"


def _classify_runs(settings: dict) -> list[dict]:
    runs = settings.get("runs")
    if runs is None:
        return [settings]
    if not isinstance(runs, list):
        raise UsageError("[classify].runs must be an array of tables")
    inherited = {k: v for k, v in settings.items() if k != "runs"}
    return [{**inherited, **run} for run in runs]


def cmd_classify(args) -> int:
    settings = _settings(args, "classify", {
        "support": args.support, "tests": args.tests, "corpus": args.corpus,
        "method": args.method, "k": args.k, "k_range": args.k_range,
        "dataset": args.dataset, "backend": args.backend, "out": args.out,
    })
    out = _out_dir(settings)
    summary_rows = []
    report_count = 0
    for run in _classify_runs(settings):
        corpus_path = run.get("corpus")
        support_path = run.get("support", corpus_path)
        tests_path = run.get("tests", corpus_path)
        if not support_path or not tests_path:
            raise UsageError("classify needs 'corpus' or both 'support' and 'tests'")
        dataset = run.get("dataset", "")
        backend = run.get("backend", "")
        prefix = "_".join(x for x in (dataset, backend) if x)
        prefix = prefix + "_" if prefix else ""

        index = trac_mod.build_index(_split_records(support_path, corpus_mod.SUPPORT))
        tests = _split_records(tests_path, corpus_mod.TEST)

        methods = _parse_methods(run.get("method"))
        k = run.get("k")
        k_range = run.get("k_range")
        row = {"backend": backend, "dataset": dataset,
               "top1": "", "topk": "", "centroid": ""}
        for method in methods:
            if method == trac_mod.METHOD_TOPK:
                if k is not None:
                    outcome = trac_mod.evaluate(index, tests, method, k=int(k))
                    (out / f"{prefix}classify_topk.json").write_text(
                        _outcome_json(outcome), encoding="utf-8")
                    row["topk"] = f"{outcome.accuracy:.6f}"
                    report_count += 1
                if k_range is not None:
                    ks = _parse_k_range(str(k_range))
                    sweep = trac_mod.k_sweep(index, tests, ks)
                    lines = ["k,accuracy"] + [f"{kk},{acc:.6f}" for kk, acc in sweep]
                    (out / f"{prefix}ksweep.csv").write_text(
                        "\n".join(lines) + "\n", encoding="utf-8")
                    report_count += 1
                if k is None and k_range is None:
                    raise UsageError("method 'topk' requires 'k' or 'k_range'")
            else:
                outcome = trac_mod.evaluate(index, tests, method)
                (out / f"{prefix}classify_{method}.json").write_text(
                    _outcome_json(outcome), encoding="utf-8")
                row[method] = f"{outcome.accuracy:.6f}"
                report_count += 1
        summary_rows.append(row)

    lines = ["backend,dataset,top1,topk,centroid"]
    lines += [f"{r['backend']},{r['dataset']},{r['top1']},{r['topk']},{r['centroid']}"
              for r in summary_rows]
    (out / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"classify: {len(summary_rows)} run(s), {report_count} report(s) -> {out}")
    return EXIT_OK


# --- fidelity -----------------------------------------------------------------

def _fidelity_csv_value(value, scaled: bool) -> str:
    if value is None:
        return ""
    return f"{value:.2f}" if scaled else f"{value:.6f}"


def cmd_fidelity(args) -> int:
    settings = _settings(args, "fidelity", {
        "dataset": args.dataset, "pairs": args.pairs,
        "image_vectors": args.image_vectors, "text_vectors": args.text_vectors,
        "reconstructed_image_vectors": args.reconstructed_image_vectors,
        "original_features": args.original_features,
        "reconstructed_features": args.reconstructed_features,
        "out": args.out,
        "scale_presentation": True if args.scale_presentation else None,
    })
    out = _out_dir(settings)
    dataset = settings.get("dataset", "")
    scaled = bool(settings.get("scale_presentation", False))

    scored: list[fidelity_mod.ScoredPair] = []
    if settings.get("pairs"):
        manifest_path = Path(settings["pairs"])
        for pair in load_pair_manifest(manifest_path, check_images=True):
            orig, recon = resolve_pair_paths(manifest_path, pair)
            score = fidelity_mod.ssim(corpus_mod.load_image(orig),
                                      corpus_mod.load_image(recon))
            scored.append(fidelity_mod.ScoredPair(pair.id, score, fidelity_mod.METRIC_SSIM))

    def vector_pairs(path_a, path_b):
        _, rec_a = load_corpus(path_a)
        _, rec_b = load_corpus(path_b)
        return corpus_mod.join_on_id(rec_a, rec_b)

    if settings.get("image_vectors") and settings.get("text_vectors"):
        for img, txt in vector_pairs(settings["image_vectors"], settings["text_vectors"]):
            scored.append(fidelity_mod.ScoredPair(
                img.id, fidelity_mod.clip_s(img.vector, txt.vector),
                fidelity_mod.METRIC_CLIP_S))
    if settings.get("image_vectors") and settings.get("reconstructed_image_vectors"):
        for img, recon in vector_pairs(settings["image_vectors"],
                                       settings["reconstructed_image_vectors"]):
            scored.append(fidelity_mod.ScoredPair(
                img.id, fidelity_mod.clip_s(img.vector, recon.vector),
                fidelity_mod.METRIC_CLIP_S_I))

    populations = None
    if settings.get("original_features") and settings.get("reconstructed_features"):
        _, feats_orig = fidelity_mod.load_feature_file(settings["original_features"])
        _, feats_recon = fidelity_mod.load_feature_file(settings["reconstructed_features"])
        populations = (fidelity_mod.fit_population(feats_orig),
                       fidelity_mod.fit_population(feats_recon))

    report = fidelity_mod.aggregate_fidelity(scored, populations, dataset=dataset)
    written = fidelity_mod.present_report(report) if scaled else report
    report_path = out / (f"fidelity_{dataset}.json" if dataset else "fidelity.json")
    report_path.write_text(json.dumps(written, indent=2, ensure_ascii=False) + "\n",
                           encoding="utf-8")

    metrics = report["metrics"]
    presented = {m: fidelity_mod.present_value(m, v) if scaled else v
                 for m, v in metrics.items()}
    csv_lines = [
        "dataset,SSIM,FID,CLIP-S-I,CLIP-S",
        ",".join([dataset] + [_fidelity_csv_value(presented.get(m), scaled)
                              for m in ("ssim", "fid", "clip_s_i", "clip_s")]),
    ]
    (out / "fidelity.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    shown = ", ".join(f"{m}={presented[m]}" for m in sorted(presented))
    print(f"fidelity: {shown or 'no metrics'} -> {report_path}")
    return EXIT_OK


# --- prompts ------------------------------------------------------------------

def _resolve_template(settings: dict) -> icl_mod.PromptTemplate:
    name = settings.get("template", "salient")
    template = icl_mod.BUILTIN_TEMPLATES.get(name)
    if template is None:
        template = icl_mod.PromptTemplate(str(name), template_id="custom")
    prefix = settings.get("answer_prefix")
    if prefix:
        template = dataclasses.replace(template, answer_prefix=prefix)
    return template


def cmd_prompts(args) -> int:
    settings = _settings(args, "prompts", {
        "template": args.template, "category": args.category,
        "answer_prefix": args.answer_prefix, "strategy": args.strategy,
        "n_shots": args.n_shots, "seed": args.seed, "pool": args.pool,
        "queries": args.queries, "max_new_tokens": args.max_new_tokens,
        "query_split": args.query_split, "pool_split": args.pool_split,
        "out": args.out,
    })
    out = _out_dir(settings)
    template = _resolve_template(settings)
    category = settings.get("category", "")
    strategy = settings.get("strategy", icl_mod.STRATEGY_RS)
    n_shots = int(settings.get("n_shots", 0))
    seed = int(settings.get("seed", 0))
    max_new_tokens = settings.get("max_new_tokens")
    if max_new_tokens is not None:
        max_new_tokens = int(max_new_tokens)

    queries_path = _require(settings, "queries", "prompts")
    _, query_records = load_corpus(queries_path)
    queries = split_view(query_records, settings.get("query_split", corpus_mod.TEST))
    if not queries:
        raise ValueError(f"no query records in {queries_path}")

    pool_records: tuple = ()
    if n_shots > 0:
        pool_path = _require(settings, "pool", "prompts")
        _, pool_all = load_corpus(pool_path)
        pool_records = tuple(split_view(
            pool_all, settings.get("pool_split", corpus_mod.SUPPORT)))
    pool_text = {r.id: r.text for r in pool_records}
    spec = icl_mod.ShotSelectionSpec(strategy=strategy, n_shots=n_shots,
                                     seed=seed, shot_pool=pool_records)
    question = icl_mod.render_zero_shot(template, category)

    def build_chunk(chunk):
        bundles = []
        for query in chunk:
            shot_ids = icl_mod.select_shots(spec, query)
            shots = [icl_mod.Shot(sid, question, pool_text[sid]) for sid in shot_ids]
            bundles.append(icl_mod.assemble_bundle(
                template, shots, question, query.id, max_new_tokens=max_new_tokens))
        return bundles

    chunks = map_chunks(build_chunk, queries)
    bundles = [b for chunk in chunks for b in chunk]
    bundle_path = out / "prompts.jsonl"
    with open(bundle_path, "w", encoding="utf-8") as fh:
        for bundle in bundles:
            fh.write(bundle.to_json_line() + "\n")
    print(f"prompts: strategy={strategy} n_shots={n_shots} seed={seed} "
          f"bundles={len(bundles)} -> {bundle_path}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fgvd-eval",
        description="Distinctiveness and fidelity evaluation for fine-grained "
                    "visual description corpora.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate corpus / pair / feature files")
    p.add_argument("files", nargs="*", help="files to validate")
    p.add_argument("--config", help="TOML run configuration")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("classify", help="retrieval classification and k sweeps")
    p.add_argument("--config")
    p.add_argument("--support", help="corpus file providing the support split")
    p.add_argument("--tests", help="corpus file providing the test split")
    p.add_argument("--corpus", help="single corpus providing both splits")
    p.add_argument("--method", help="top1|topk|centroid, comma list, or 'all'")
    p.add_argument("--k", type=int)
    p.add_argument("--k-range", dest="k_range", help="inclusive sweep range A:B")
    p.add_argument("--dataset")
    p.add_argument("--backend")
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("fidelity", help="image/text fidelity metric suite")
    p.add_argument("--config")
    p.add_argument("--dataset")
    p.add_argument("--pairs", help="image-pair manifest for SSIM")
    p.add_argument("--image-vectors", dest="image_vectors")
    p.add_argument("--text-vectors", dest="text_vectors")
    p.add_argument("--reconstructed-image-vectors", dest="reconstructed_image_vectors")
    p.add_argument("--original-features", dest="original_features")
    p.add_argument("--reconstructed-features", dest="reconstructed_features")
    p.add_argument("--scale-presentation", action="store_true", default=False)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fidelity)

    p = sub.add_parser("prompts", help="export zero-/n-shot prompt bundles")
    p.add_argument("--config")
    p.add_argument("--template", help="'salient', 'global', or a literal pattern")
    p.add_argument("--category")
    p.add_argument("--answer-prefix", dest="answer_prefix")
    p.add_argument("--strategy", choices=icl_mod.STRATEGIES)
    p.add_argument("--n-shots", dest="n_shots", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--pool", help="corpus file providing the shot pool")
    p.add_argument("--queries", help="corpus file providing the query split")
    p.add_argument("--query-split", dest="query_split", choices=("support", "test"))
    p.add_argument("--pool-split", dest="pool_split", choices=("support", "test"))
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_prompts)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, fidelity_mod.FidelityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
