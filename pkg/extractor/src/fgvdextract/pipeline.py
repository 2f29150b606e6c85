"""The five batch jobs, each emitting evaluation-engine file formats.

Failure policy follows the job kind: generation and reconstruction record
per-item failures in the sidecar and keep going; embedding aborts on the
first failure because a partially embedded corpus is useless downstream.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .jobs import ExtractorJob, write_sidecar


# --- corpus wire format (the engine's external file interface) -----------------

def _fmt_f32(value) -> str:
    v = np.float32(value)
    if not np.isfinite(v):
        raise ValueError("non-finite embedding value")
    mag = abs(float(v))
    if mag != 0.0 and (mag < 1e-4 or mag >= 1e16):
        return np.format_float_scientific(v, unique=True, trim="0")
    return np.format_float_positional(v, unique=True, trim="0")


def _jstr(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def write_corpus_file(path, name: str, dimension: int, records: list[dict]) -> None:
    """JSON Lines corpus: manifest first, then one record per line."""
    class_list = sorted({r["label"] for r in records})
    manifest = {
        "name": name, "dimension": dimension, "class_list": class_list,
        "support_count": sum(1 for r in records if r["split"] == "support"),
        "test_count": sum(1 for r in records if r["split"] == "test"),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, ensure_ascii=False, separators=(",", ":")) + "\n")
        for rec in records:
            parts = [f'"id":{_jstr(rec["id"])}', f'"label":{_jstr(rec["label"])}',
                     f'"split":{_jstr(rec["split"])}', f'"text":{_jstr(rec["text"])}']
            if rec.get("vector") is not None:
                parts.append('"vector":[' + ",".join(_fmt_f32(v) for v in rec["vector"]) + "]")
            if rec.get("source_image"):
                parts.append(f'"source_image":{_jstr(rec["source_image"])}')
            fh.write("{" + ",".join(parts) + "}\n")


def read_corpus_file(path) -> tuple[dict, list[dict]]:
    """Light reader for corpus files used as job inputs (the engine's
    `validate` remains the authority on format correctness)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"path not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty corpus file")
    manifest = json.loads(lines[0])
    records = [json.loads(line) for line in lines[1:]]
    return manifest, records


def load_bundles(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"path not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh]


# --- jobs ------------------------------------------------------------------------

def generate_descriptions(job: ExtractorJob, model, bundles: list[dict],
                          items: list[dict]) -> tuple[list[dict], list[dict]]:
    """One description per prompt bundle; per-item failures are recorded and
    the run continues."""
    items_by_id = {item["id"]: item for item in items}
    records, failures = [], []
    for bundle in bundles:
        query_id = bundle["query_id"]
        item = items_by_id.get(query_id)
        if item is None:
            failures.append({"id": query_id, "error": "no matching item in items manifest"})
            continue
        params = job.params
        if bundle.get("max_new_tokens") is not None:
            params = dataclasses.replace(params, max_new_tokens=bundle["max_new_tokens"])
        try:
            text = model.generate(bundle["prompt"], item, params)
        except Exception as exc:  # run continues, failure logged
            failures.append({"id": query_id, "error": str(exc)})
            continue
        if not text:
            failures.append({"id": query_id, "error": "model produced empty text"})
            continue
        records.append({"id": query_id, "label": item["label"], "split": item["split"],
                        "text": text, "source_image": item.get("image_path")})
    return records, failures


def embed_text_corpus(job: ExtractorJob, model,
                      corpus_records: list[dict]) -> tuple[list[dict], int]:
    """Attach text embeddings; any encoder failure aborts the job."""
    out = []
    dim = None
    for rec in corpus_records:
        vector = np.asarray(model.embed_text(rec["text"]), dtype=np.float32)
        if dim is None:
            dim = int(vector.shape[0])
        elif vector.shape[0] != dim:
            raise RuntimeError(
                f"encoder returned inconsistent dimensions ({vector.shape[0]} vs {dim})")
        out.append({**rec, "vector": vector})
    if dim is None:
        raise ValueError("no records to embed")
    return out, dim


def embed_image_items(job: ExtractorJob, model,
                      items: list[dict]) -> tuple[list[dict], int]:
    """Image embeddings per item; any failure aborts."""
    out = []
    dim = None
    for item in items:
        if not item.get("image_path"):
            raise RuntimeError(f"item '{item['id']}' has no image_path")
        vector = np.asarray(model.embed_image(item["image_path"]), dtype=np.float32)
        if dim is None:
            dim = int(vector.shape[0])
        elif vector.shape[0] != dim:
            raise RuntimeError(
                f"encoder returned inconsistent dimensions ({vector.shape[0]} vs {dim})")
        out.append({"id": item["id"], "label": item["label"], "split": item["split"],
                    "text": "", "vector": vector, "source_image": item["image_path"]})
    if dim is None:
        raise ValueError("no items to embed")
    return out, dim


def extract_features(job: ExtractorJob, model,
                     images: list[tuple[str, str]], output_path) -> int:
    """Feature vectors for FID: JSON Lines of {id, vector}; failures abort."""
    with open(output_path, "w", encoding="utf-8") as fh:
        for item_id, image_path in images:
            vector = np.asarray(model.embed_image(image_path), dtype=np.float32)
            fh.write('{"id":%s,"vector":[%s]}\n'
                     % (_jstr(item_id), ",".join(_fmt_f32(v) for v in vector)))
    return len(images)


def reconstruct_images(job: ExtractorJob, model, corpus_records: list[dict],
                       image_dir, pairs_path) -> tuple[int, list[dict]]:
    """Render one image per description and emit the pair manifest.

    Per-item failures (empty description, missing source image, backend
    error) are recorded and the item skipped.
    """
    image_dir = Path(image_dir)
    image_dir.mkdir(parents=True, exist_ok=True)
    pairs_path = Path(pairs_path)
    pairs_path.parent.mkdir(parents=True, exist_ok=True)
    written = 0
    failures = []
    with open(pairs_path, "w", encoding="utf-8") as fh:
        for rec in corpus_records:
            if not rec.get("text"):
                failures.append({"id": rec["id"], "error": "empty description"})
                continue
            original = rec.get("source_image")
            if not original or not Path(original).exists():
                failures.append({"id": rec["id"],
                                 "error": f"missing source image '{original}'"})
                continue
            try:
                image = model.reconstruct(rec["text"], job.seed)
            except Exception as exc:
                failures.append({"id": rec["id"], "error": str(exc)})
                continue
            recon_path = image_dir / f"{rec['id']}.png"
            image.save(recon_path, format="PNG")
            pair = {
                "id": rec["id"],
                "original_path": _relative_to_manifest(original, pairs_path),
                "reconstructed_path": _relative_to_manifest(recon_path, pairs_path),
            }
            fh.write(json.dumps(pair, ensure_ascii=False, separators=(",", ":")) + "\n")
            written += 1
    return written, failures


def _relative_to_manifest(path, manifest_path) -> str:
    import os
    return os.path.relpath(Path(path).resolve(), Path(manifest_path).resolve().parent)


def finish_job(job: ExtractorJob, output_path, *, count: int,
               failures: list[dict], extra: dict | None = None,
               validate: bool = True) -> None:
    """Sidecar + post-job validation through the engine CLI."""
    write_sidecar(output_path, job, count=count, failures=failures, extra=extra)
    if validate:
        from .jobs import validate_output
        validate_output(output_path)
