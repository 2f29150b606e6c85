"""Corpus data model and the JSON Lines file formats shared by every component.

A description corpus (``*.fgvd.jsonl``) is a JSON Lines file whose first line
is a manifest object (keys ``name, dimension, class_list, support_count,
test_count``) followed by one record object per line. Vectors are stored as
32-bit floats and serialized as the shortest decimal that round-trips the
float32 value, which makes save -> load -> save a byte-level fixed point.

An image-pair manifest is plain JSON Lines of
``{id, original_path, reconstructed_path}`` with no leading manifest object.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

SUPPORT = "support"
TEST = "test"
SPLITS = (SUPPORT, TEST)

_MANIFEST_KEYS = ("name", "dimension", "class_list", "support_count", "test_count")
_RECORD_REQUIRED = ("id", "label", "split", "text")
_RECORD_OPTIONAL = ("vector", "source_image")
_PAIR_KEYS = ("id", "original_path", "reconstructed_path")


class CorpusError(ValueError):
    """A corpus or manifest file violates the format contract.

    Carries the offending file path and 1-based line number when known.
    """

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        self.message = message
        prefix = ""
        if self.path is not None:
            prefix = self.path + (f":{line}" if line is not None else "") + ": "
        super().__init__(prefix + message)


@dataclass(frozen=True)
class CorpusManifest:
    """First-line corpus header. ``dimension == 0`` marks a text-only corpus."""

    name: str
    dimension: int
    class_list: tuple[str, ...]
    support_count: int
    test_count: int


@dataclass(frozen=True)
class CorpusRecord:
    """One described image: identity, class label, split tag, text, and an
    optional float32 embedding plus the source image path."""

    id: str
    label: str
    split: str
    text: str
    vector: np.ndarray | None = None
    source_image: str | None = None


@dataclass(frozen=True)
class ImagePairRecord:
    """Original/reconstructed image file pair, joined on a shared id."""

    id: str
    original_path: str
    reconstructed_path: str


def _freeze_vector(values) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float32)
    vec.flags.writeable = False
    return vec


def make_record(id: str, label: str, split: str, text: str = "",
                vector=None, source_image: str | None = None) -> CorpusRecord:
    """Build a validated record; raises CorpusError on any invariant breach."""
    problems = _record_problems(
        {"id": id, "label": label, "split": split, "text": text,
         **({"vector": vector} if vector is not None else {}),
         **({"source_image": source_image} if source_image is not None else {})},
        dimension=None, class_list=None)
    if problems:
        raise CorpusError(problems[0])
    frozen = _freeze_vector(vector) if vector is not None else None
    return CorpusRecord(id=id, label=label, split=split, text=text,
                        vector=frozen, source_image=source_image)


def _record_problems(obj, dimension, class_list) -> list[str]:
    """Validate a parsed record object; returns human-readable violations.

    dimension/class_list of None skip the manifest-relative checks.
    """
    if not isinstance(obj, dict):
        return ["record is not a JSON object"]
    problems = []
    for key in _RECORD_REQUIRED:
        if key not in obj:
            problems.append(f"missing required key '{key}'")
    for key in obj:
        if key not in _RECORD_REQUIRED and key not in _RECORD_OPTIONAL:
            problems.append(f"unknown key '{key}'")
    if problems:
        return problems
    for key in ("id", "label", "split", "text"):
        if not isinstance(obj[key], str):
            problems.append(f"'{key}' must be a string")
    if "source_image" in obj and not isinstance(obj["source_image"], str):
        problems.append("'source_image' must be a string")
    if problems:
        return problems
    if obj["split"] not in SPLITS:
        problems.append(f"unknown split '{obj['split']}'")
    if not obj["id"]:
        problems.append("'id' must be non-empty")
    vector = obj.get("vector")
    if vector is not None:
        if not isinstance(vector, (list, np.ndarray)):
            problems.append("'vector' must be an array of numbers")
        else:
            try:
                arr = np.asarray(vector, dtype=np.float32)
            except (TypeError, ValueError):
                problems.append("'vector' must be an array of numbers")
                arr = None
            if arr is not None:
                if arr.ndim != 1:
                    problems.append("'vector' must be a flat array")
                elif not np.all(np.isfinite(arr)):
                    problems.append("'vector' contains a non-finite value")
                elif dimension is not None and arr.shape[0] != dimension:
                    problems.append(
                        f"vector length {arr.shape[0]} does not match corpus dimension {dimension}")
    if obj["text"] == "" and vector is None:
        problems.append("empty text requires a vector")
    if class_list is not None and obj.get("label") not in class_list:
        problems.append(f"label '{obj.get('label')}' not in manifest class_list")
    return problems


def _manifest_problems(obj) -> list[str]:
    if not isinstance(obj, dict):
        return ["manifest is not a JSON object"]
    problems = []
    for key in _MANIFEST_KEYS:
        if key not in obj:
            problems.append(f"manifest missing key '{key}'")
    for key in obj:
        if key not in _MANIFEST_KEYS:
            problems.append(f"manifest has unknown key '{key}'")
    if problems:
        return problems
    if not isinstance(obj["name"], str):
        problems.append("manifest 'name' must be a string")
    if not isinstance(obj["dimension"], int) or isinstance(obj["dimension"], bool) or obj["dimension"] < 0:
        problems.append("manifest 'dimension' must be an integer >= 0")
    if (not isinstance(obj["class_list"], list)
            or not all(isinstance(c, str) for c in obj["class_list"])):
        problems.append("manifest 'class_list' must be a list of strings")
    for key in ("support_count", "test_count"):
        if not isinstance(obj[key], int) or isinstance(obj[key], bool) or obj[key] < 0:
            problems.append(f"manifest '{key}' must be an integer >= 0")
    return problems


def _scan(path) -> tuple[CorpusManifest | None, list[CorpusRecord], list[tuple[int, str]]]:
    """Single-pass reader shared by the strict loader and the validator."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"path not found: {path}")
    violations: list[tuple[int, str]] = []
    manifest = None
    records: list[CorpusRecord] = []
    seen_ids: set[str] = set()
    tallies = {SUPPORT: 0, TEST: 0}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                violations.append((line_no, f"unparseable line: {exc.msg}"))
                continue
            if line_no == 1:
                problems = _manifest_problems(obj)
                if problems:
                    violations.extend((1, p) for p in problems)
                else:
                    manifest = CorpusManifest(
                        name=obj["name"], dimension=obj["dimension"],
                        class_list=tuple(obj["class_list"]),
                        support_count=obj["support_count"], test_count=obj["test_count"])
                continue
            dim = manifest.dimension if manifest is not None else None
            classes = set(manifest.class_list) if manifest is not None else None
            problems = _record_problems(obj, dim, classes)
            if not problems and obj["id"] in seen_ids:
                problems = [f"duplicate id '{obj['id']}'"]
            if problems:
                violations.extend((line_no, p) for p in problems)
                continue
            seen_ids.add(obj["id"])
            tallies[obj["split"]] += 1
            vector = _freeze_vector(obj["vector"]) if obj.get("vector") is not None else None
            records.append(CorpusRecord(
                id=obj["id"], label=obj["label"], split=obj["split"], text=obj["text"],
                vector=vector, source_image=obj.get("source_image")))
    if manifest is None and not violations:
        violations.append((1, "empty file: manifest line required"))
    if manifest is not None:
        if tallies[SUPPORT] != manifest.support_count:
            violations.append(
                (1, f"manifest support_count {manifest.support_count} != actual {tallies[SUPPORT]}"))
        if tallies[TEST] != manifest.test_count:
            violations.append(
                (1, f"manifest test_count {manifest.test_count} != actual {tallies[TEST]}"))
    return manifest, records, violations


def load_corpus(path) -> tuple[CorpusManifest, list[CorpusRecord]]:
    """Load and validate a corpus file; raises CorpusError on the first violation."""
    manifest, records, violations = _scan(path)
    if violations:
        line, message = violations[0]
        raise CorpusError(message, path=path, line=line)
    return manifest, records


def scan_corpus(path) -> list[tuple[int, str]]:
    """Return every format violation in the file as (line, message), empty if clean."""
    _, _, violations = _scan(path)
    return sorted(violations)


def _format_f32(value) -> str:
    """Shortest decimal that parses back to the same float32."""
    v = np.float32(value)
    if not np.isfinite(v):
        raise CorpusError("vector contains a non-finite value")
    mag = abs(float(v))
    if mag != 0.0 and (mag < 1e-4 or mag >= 1e16):
        return np.format_float_scientific(v, unique=True, trim="0")
    return np.format_float_positional(v, unique=True, trim="0")


def _json_str(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def record_to_line(record: CorpusRecord) -> str:
    parts = [
        f'"id":{_json_str(record.id)}',
        f'"label":{_json_str(record.label)}',
        f'"split":{_json_str(record.split)}',
        f'"text":{_json_str(record.text)}',
    ]
    if record.vector is not None:
        parts.append('"vector":[' + ",".join(_format_f32(v) for v in record.vector) + "]")
    if record.source_image is not None:
        parts.append(f'"source_image":{_json_str(record.source_image)}')
    return "{" + ",".join(parts) + "}"


def manifest_to_line(manifest: CorpusManifest) -> str:
    obj = {"name": manifest.name, "dimension": manifest.dimension,
           "class_list": list(manifest.class_list),
           "support_count": manifest.support_count, "test_count": manifest.test_count}
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def save_corpus(path, manifest: CorpusManifest, records: Iterable[CorpusRecord]) -> None:
    """Write the canonical serialization (fixed key order, shortest-round-trip floats)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(manifest_to_line(manifest) + "\n")
        for record in records:
            fh.write(record_to_line(record) + "\n")


def build_manifest(name: str, dimension: int, records: Sequence[CorpusRecord],
                   class_list: Sequence[str] | None = None) -> CorpusManifest:
    """Derive a manifest from records; class_list defaults to sorted unique labels."""
    if class_list is None:
        class_list = sorted({r.label for r in records})
    return CorpusManifest(
        name=name, dimension=dimension, class_list=tuple(class_list),
        support_count=sum(1 for r in records if r.split == SUPPORT),
        test_count=sum(1 for r in records if r.split == TEST))


def split_view(records: Sequence[CorpusRecord], split: str) -> list[CorpusRecord]:
    """Records whose split matches, in stable input order."""
    if split not in SPLITS:
        raise ValueError(f"unknown split '{split}'")
    return [r for r in records if r.split == split]


def join_on_id(a: Sequence[CorpusRecord], b: Sequence[CorpusRecord]
               ) -> list[tuple[CorpusRecord, CorpusRecord]]:
    """Pair each a-record with the b-record of equal id, preserving a's order.

    Raises ValueError listing every a-id missing from b; b must have unique ids.
    Extra b-records are ignored.
    """
    by_id: dict[str, CorpusRecord] = {}
    for rec in b:
        if rec.id in by_id:
            raise ValueError(f"ids in b are not unique: '{rec.id}'")
        by_id[rec.id] = rec
    missing = [rec.id for rec in a if rec.id not in by_id]
    if missing:
        raise ValueError(f"ids missing from b: {missing}")
    return [(rec, by_id[rec.id]) for rec in a]


def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB or grayscale image as uint8 (H, W) or (H, W, 3)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"path not found: {path}")
    try:
        with Image.open(path) as img:
            if img.mode not in ("RGB", "L"):
                raise CorpusError(
                    f"image mode '{img.mode}' not supported (8-bit RGB or grayscale only)",
                    path=path)
            return np.asarray(img, dtype=np.uint8)
    except UnidentifiedImageError:
        raise CorpusError("file is not a readable image", path=path)


def _scan_pairs(path, check_images: bool
                ) -> tuple[list[ImagePairRecord], list[tuple[int, str]]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"path not found: {path}")
    pairs: list[ImagePairRecord] = []
    violations: list[tuple[int, str]] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                violations.append((line_no, f"unparseable line: {exc.msg}"))
                continue
            if (not isinstance(obj, dict) or sorted(obj) != sorted(_PAIR_KEYS)
                    or not all(isinstance(obj[k], str) for k in _PAIR_KEYS)):
                violations.append(
                    (line_no, "pair record must be {id, original_path, reconstructed_path} strings"))
                continue
            if obj["id"] in seen:
                violations.append((line_no, f"duplicate id '{obj['id']}'"))
                continue
            seen.add(obj["id"])
            pair = ImagePairRecord(**obj)
            if check_images:
                ok = True
                for p in resolve_pair_paths(path, pair):
                    try:
                        load_image(p)
                    except (FileNotFoundError, CorpusError) as exc:
                        violations.append((line_no, f"unreadable image '{p}': {exc}"))
                        ok = False
                if not ok:
                    continue
            pairs.append(pair)
    return pairs, violations


def load_pair_manifest(path, check_images: bool = True) -> list[ImagePairRecord]:
    """Load an image-pair manifest; with check_images, verify both images decode."""
    pairs, violations = _scan_pairs(path, check_images)
    if violations:
        line, message = violations[0]
        raise CorpusError(message, path=path, line=line)
    return pairs


def scan_pair_manifest(path, check_images: bool = True) -> list[tuple[int, str]]:
    _, violations = _scan_pairs(path, check_images)
    return sorted(violations)


def save_pair_manifest(path, pairs: Iterable[ImagePairRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            obj = {"id": pair.id, "original_path": pair.original_path,
                   "reconstructed_path": pair.reconstructed_path}
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")


def resolve_pair_paths(manifest_path, pair: ImagePairRecord) -> tuple[Path, Path]:
    """Pair paths are taken relative to the manifest's directory unless absolute."""
    base = Path(manifest_path).parent
    orig = Path(pair.original_path)
    recon = Path(pair.reconstructed_path)
    return (orig if orig.is_absolute() else base / orig,
            recon if recon.is_absolute() else base / recon)
