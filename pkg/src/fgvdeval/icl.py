"""Zero-shot and n-shot prompt bundle construction for external generators.

Shot selection strategies:

* RS: uniform sample without replacement, seeded per query (seed mixed with
  a hash of the query id, so selection is independent of processing order).
* SIIR: top-n pool items by image-embedding cosine to the query image.
* STTR: top-n pool items by text-embedding cosine to the query's zero-shot
  draft embedding.
* FIXED_POOL: first n items of a curated pool (e.g. externally authored
  high-quality descriptions).

Selected shots are ordered by ascending similarity so the most similar shot
sits adjacent to the query question. The query's own id is never selected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .corpus import CorpusRecord
from .textvec import l2_normalize

PLACEHOLDER = "{Category}"

STRATEGY_RS = "RS"
STRATEGY_SIIR = "SIIR"
STRATEGY_STTR = "STTR"
STRATEGY_FIXED_POOL = "FIXED_POOL"
STRATEGIES = (STRATEGY_RS, STRATEGY_SIIR, STRATEGY_STTR, STRATEGY_FIXED_POOL)

MAX_SHOTS = 4


@dataclass(frozen=True)
class PromptTemplate:
    """Question pattern with at most one {Category} placeholder, plus an
    optional answer-steering prefix appended after the question."""

    question_pattern: str
    answer_prefix: str | None = None
    template_id: str = ""

    def __post_init__(self):
        if self.question_pattern.count(PLACEHOLDER) > 1:
            raise ValueError("question pattern may contain {Category} at most once")


SALIENT_FEATURES_TEMPLATE = PromptTemplate(
    "What are the main visual features for {Category} in this image?",
    template_id="salient-features")

GLOBAL_RELATIONS_TEMPLATE = PromptTemplate(
    "What are the main elements in this image, and how do they interact or "
    "relate to each other?",
    template_id="global-relations")

BUILTIN_TEMPLATES = {
    "salient": SALIENT_FEATURES_TEMPLATE,
    "global": GLOBAL_RELATIONS_TEMPLATE,
}


def render_zero_shot(template: PromptTemplate, category: str = "") -> str:
    """Substitute the category into the question pattern verbatim."""
    has_placeholder = PLACEHOLDER in template.question_pattern
    if category:
        if not has_placeholder:
            raise ValueError("template has no {Category} placeholder for the category")
        question = template.question_pattern.replace(PLACEHOLDER, category)
    else:
        if has_placeholder:
            raise ValueError("template requires a category")
        question = template.question_pattern
    if template.answer_prefix:
        question = question + " " + template.answer_prefix
    return question


@dataclass(frozen=True)
class ShotSelectionSpec:
    strategy: str
    n_shots: int
    seed: int = 0
    shot_pool: tuple[CorpusRecord, ...] = ()

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy '{self.strategy}'")
        if not 0 <= self.n_shots <= MAX_SHOTS:
            raise ValueError(f"n_shots must be in 0..{MAX_SHOTS}, got {self.n_shots}")


def _per_query_rng(seed: int, query_id: str) -> np.random.Generator:
    digest = hashlib.sha256(query_id.encode("utf-8")).digest()
    return np.random.default_rng(
        [seed & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest[:8], "big")])


def _similarity_order(pool: Sequence[CorpusRecord], query: CorpusRecord,
                      n: int, kind: str) -> list[str]:
    if query.vector is None:
        raise ValueError(f"{kind} requires a query {_vector_noun(kind)}")
    missing = [r.id for r in pool if r.vector is None]
    if missing:
        raise ValueError(
            f"{kind} requires {_vector_noun(kind)}s in the pool; missing for {missing[:5]}")
    matrix = l2_normalize(np.stack([r.vector.astype(np.float64) for r in pool]))
    q = l2_normalize(query.vector.astype(np.float64))
    sims = matrix @ q
    top = np.argsort(-sims, kind="stable")[:n]
    # reverse: ascending similarity, most similar shot last
    return [pool[i].id for i in top[::-1]]


def _vector_noun(kind: str) -> str:
    return "image vector" if kind == STRATEGY_SIIR else "text vector"


def select_shots(spec: ShotSelectionSpec, query: CorpusRecord) -> list[str]:
    """Ordered shot ids for one query; the query's own id is excluded."""
    pool = [r for r in spec.shot_pool if r.id != query.id]
    if spec.n_shots == 0:
        return []
    if not pool:
        raise ValueError("shot pool is empty")
    if spec.n_shots > len(pool):
        raise ValueError(
            f"n_shots {spec.n_shots} exceeds pool size {len(pool)} after self-exclusion")
    if spec.strategy == STRATEGY_RS:
        rng = _per_query_rng(spec.seed, query.id)
        picks = rng.choice(len(pool), size=spec.n_shots, replace=False)
        return [pool[i].id for i in picks]
    if spec.strategy in (STRATEGY_SIIR, STRATEGY_STTR):
        return _similarity_order(pool, query, spec.n_shots, spec.strategy)
    return [r.id for r in pool[:spec.n_shots]]


class Shot(NamedTuple):
    id: str
    question: str
    description: str


@dataclass(frozen=True)
class PromptBundle:
    query_id: str
    rendered_prompt: str
    shot_ids: tuple[str, ...]
    template_id: str
    max_new_tokens: int | None = None

    def to_json_line(self) -> str:
        obj = {"query_id": self.query_id, "prompt": self.rendered_prompt,
               "shot_ids": list(self.shot_ids), "template_id": self.template_id,
               "max_new_tokens": self.max_new_tokens}
        return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def assemble_bundle(template: PromptTemplate, shots: Sequence[Shot],
                    query_question: str, query_id: str,
                    max_new_tokens: int | None = None) -> PromptBundle:
    """Interleave (question, description) demonstrations before the query
    question, one block element per line; the query question comes last."""
    lines: list[str] = []
    for shot in shots:
        lines.append(shot.question)
        lines.append(shot.description)
    lines.append(query_question)
    return PromptBundle(
        query_id=query_id,
        rendered_prompt="\n".join(lines),
        shot_ids=tuple(shot.id for shot in shots),
        template_id=template.template_id,
        max_new_tokens=max_new_tokens)


def load_bundles(path) -> list[PromptBundle]:
    """Read a prompt-bundle JSONL file."""
    bundles = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            obj = json.loads(raw)
            bundles.append(PromptBundle(
                query_id=obj["query_id"], rendered_prompt=obj["prompt"],
                shot_ids=tuple(obj["shot_ids"]), template_id=obj["template_id"],
                max_new_tokens=obj.get("max_new_tokens")))
    return bundles
