"""fgvd-extract: batch extraction jobs writing fgvd-eval corpus files."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .jobs import ExtractorJob, GenerationParams, load_items
from .models import ModelUnavailableError, resolve_model
from .pipeline import (
    embed_image_items,
    embed_text_corpus,
    extract_features,
    finish_job,
    generate_descriptions,
    load_bundles,
    read_corpus_file,
    reconstruct_images,
    write_corpus_file,
)


def _params(args) -> GenerationParams:
    return GenerationParams(beam_size=args.beam_size,
                            length_penalty=args.length_penalty,
                            max_new_tokens=args.max_new_tokens)


def cmd_generate(args) -> int:
    job = ExtractorJob(task="generate", model=args.model, input_path=args.bundles,
                       output_path=args.out, params=_params(args),
                       dataset_name=args.dataset_name)
    model = resolve_model(args.model, "generate")
    bundles = load_bundles(args.bundles)
    items = load_items(args.items)
    records, failures = generate_descriptions(job, model, bundles, items)
    if not records:
        print("error: every generation failed", file=sys.stderr)
        return 1
    write_corpus_file(args.out, args.dataset_name, 0, records)
    finish_job(job, args.out, count=len(records), failures=failures,
               validate=not args.no_validate)
    print(f"generate: {len(records)} description(s), {len(failures)} failure(s) "
          f"-> {args.out}")
    return 0


def cmd_embed_text(args) -> int:
    job = ExtractorJob(task="embed_text", model=args.model, input_path=args.corpus,
                       output_path=args.out)
    model = resolve_model(args.model, "embed_text")
    manifest, records = read_corpus_file(args.corpus)
    embedded, dim = embed_text_corpus(job, model, records)
    write_corpus_file(args.out, args.dataset_name or manifest.get("name", "embedded"),
                      dim, embedded)
    finish_job(job, args.out, count=len(embedded), failures=[],
               extra={"dimension": dim}, validate=not args.no_validate)
    print(f"embed-text: {len(embedded)} vector(s), dim {dim} -> {args.out}")
    return 0


def cmd_embed_image(args) -> int:
    job = ExtractorJob(task="embed_image", model=args.model, input_path=args.items,
                       output_path=args.out)
    model = resolve_model(args.model, "embed_image")
    items = load_items(args.items)
    embedded, dim = embed_image_items(job, model, items)
    write_corpus_file(args.out, args.dataset_name, dim, embedded)
    finish_job(job, args.out, count=len(embedded), failures=[],
               extra={"dimension": dim}, validate=not args.no_validate)
    print(f"embed-image: {len(embedded)} vector(s), dim {dim} -> {args.out}")
    return 0


def _feature_images(args) -> list[tuple[str, str]]:
    if args.items:
        items = load_items(args.items)
        missing = [i["id"] for i in items if not i.get("image_path")]
        if missing:
            raise ValueError(f"items without image_path: {missing[:5]}")
        return [(i["id"], i["image_path"]) for i in items]
    if not args.pairs:
        raise ValueError("features needs --items or --pairs")
    import json
    base = Path(args.pairs).parent
    key = "original_path" if args.side == "original" else "reconstructed_path"
    out = []
    with open(args.pairs, encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            path = Path(obj[key])
            out.append((obj["id"], str(path if path.is_absolute() else base / path)))
    return out


def cmd_features(args) -> int:
    job = ExtractorJob(task="features", model=args.model,
                       input_path=args.items or args.pairs, output_path=args.out)
    model = resolve_model(args.model, "features")
    images = _feature_images(args)
    count = extract_features(job, model, images, args.out)
    finish_job(job, args.out, count=count, failures=[],
               validate=not args.no_validate)
    print(f"features: {count} vector(s) -> {args.out}")
    return 0


def cmd_reconstruct(args) -> int:
    job = ExtractorJob(task="reconstruct", model=args.model, input_path=args.corpus,
                       output_path=args.pairs_out, seed=args.seed)
    model = resolve_model(args.model, "reconstruct")
    _, records = read_corpus_file(args.corpus)
    count, failures = reconstruct_images(job, model, records, args.image_dir,
                                         args.pairs_out)
    if count == 0:
        print("error: every reconstruction failed", file=sys.stderr)
        return 1
    extra = {"defaults": getattr(model, "defaults", None)}
    finish_job(job, args.pairs_out, count=count, failures=failures, extra=extra,
               validate=not args.no_validate)
    print(f"reconstruct: {count} image(s), {len(failures)} failure(s) "
          f"-> {args.pairs_out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fgvd-extract",
        description="Model-side extraction jobs emitting fgvd-eval corpus files.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate descriptions from prompt bundles")
    p.add_argument("--bundles", required=True, help="prompt-bundle JSONL")
    p.add_argument("--items", required=True, help="items manifest JSONL")
    p.add_argument("--model", default="stub-echo")
    p.add_argument("--out", required=True, help="output corpus path")
    p.add_argument("--dataset-name", default="generated")
    p.add_argument("--beam-size", type=int, default=3)
    p.add_argument("--length-penalty", type=float, default=1.0)
    p.add_argument("--max-new-tokens", type=int, default=None)
    p.add_argument("--no-validate", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("embed-text", help="embed a text corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", default="stub-hash")
    p.add_argument("--out", required=True)
    p.add_argument("--dataset-name", default=None)
    p.add_argument("--no-validate", action="store_true")
    p.set_defaults(func=cmd_embed_text)

    p = sub.add_parser("embed-image", help="embed images from an items manifest")
    p.add_argument("--items", required=True)
    p.add_argument("--model", default="stub-hash")
    p.add_argument("--out", required=True)
    p.add_argument("--dataset-name", default="image-embeddings")
    p.add_argument("--no-validate", action="store_true")
    p.set_defaults(func=cmd_embed_image)

    p = sub.add_parser("features", help="feature vectors for FID")
    p.add_argument("--items", default=None)
    p.add_argument("--pairs", default=None, help="image-pair manifest")
    p.add_argument("--side", choices=("original", "reconstructed"),
                   default="original")
    p.add_argument("--model", default="stub-hash")
    p.add_argument("--out", required=True)
    p.add_argument("--no-validate", action="store_true")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("reconstruct", help="render images from descriptions")
    p.add_argument("--corpus", required=True, help="description corpus")
    p.add_argument("--model", default="stub-noise")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-dir", required=True)
    p.add_argument("--pairs-out", required=True)
    p.add_argument("--no-validate", action="store_true")
    p.set_defaults(func=cmd_reconstruct)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelUnavailableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
