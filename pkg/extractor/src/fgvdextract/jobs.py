"""Job descriptions, input manifests, sidecars, and output validation.

Items manifest (extractor input): JSON Lines of
``{id, label, split, image_path}`` describing the dataset items a job runs
over. ``image_path`` is resolved relative to the manifest's directory.

Every job writes a sidecar manifest next to its output
(``<output>.manifest.json``) recording the task, model id, generation
parameters, seed, per-item failures, and backend defaults. After writing,
the output is checked with the evaluation engine's ``fgvd-eval validate``
command (the engine is only ever used through that CLI).
"""

from __future__ import annotations

import json
import shutil
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

TASKS = ("generate", "embed_text", "embed_image", "features", "reconstruct")


@dataclass(frozen=True)
class GenerationParams:
    beam_size: int = 3
    length_penalty: float = 1.0
    max_new_tokens: int | None = None


@dataclass(frozen=True)
class ExtractorJob:
    task: str
    model: str
    input_path: str
    output_path: str
    params: GenerationParams = field(default_factory=GenerationParams)
    seed: int = 0
    dataset_name: str = "extracted"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task '{self.task}' (expected one of {TASKS})")


def load_items(path) -> list[dict]:
    """Read an items manifest; image paths are resolved against its directory."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"path not found: {path}")
    items = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            obj = json.loads(raw)
            required = {"id", "label", "split"}
            if not isinstance(obj, dict) or not required <= set(obj):
                raise ValueError(f"{path}:{line_no}: item needs id, label, split")
            if obj["id"] in seen:
                raise ValueError(f"{path}:{line_no}: duplicate id '{obj['id']}'")
            seen.add(obj["id"])
            if obj.get("image_path"):
                image = Path(obj["image_path"])
                if not image.is_absolute():
                    image = path.parent / image
                obj = {**obj, "image_path": str(image)}
            items.append(obj)
    return items


def write_sidecar(output_path, job: ExtractorJob, *, count: int,
                  failures: list[dict], extra: dict | None = None) -> Path:
    sidecar = Path(str(output_path) + ".manifest.json")
    payload = {
        "task": job.task,
        "model": job.model,
        "params": {
            "beam_size": job.params.beam_size,
            "length_penalty": job.params.length_penalty,
            "max_new_tokens": job.params.max_new_tokens,
        },
        "seed": job.seed,
        "input": str(job.input_path),
        "output": str(output_path),
        "count": count,
        "failures": failures,
    }
    if extra:
        payload.update(extra)
    sidecar.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n",
                       encoding="utf-8")
    return sidecar


def _validator_command() -> list[str]:
    exe = shutil.which("fgvd-eval")
    if exe:
        return [exe]
    return [sys.executable, "-m", "fgvdeval.cli"]


def validate_output(path) -> None:
    """Run `fgvd-eval validate` on a job output; raises on any violation."""
    result = subprocess.run(_validator_command() + ["validate", str(path)],
                            capture_output=True, text=True)
    if result.returncode != 0:
        raise RuntimeError(
            f"output {path} failed validation (exit {result.returncode}):\n"
            f"{result.stdout}{result.stderr}")
