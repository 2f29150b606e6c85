from __future__ import annotations

import numpy as np
import pytest

from fgvdeval.corpus import CorpusRecord, build_manifest, make_record, save_corpus


def record(id, label, split, text="", vector=None, source_image=None) -> CorpusRecord:
    return make_record(id=id, label=label, split=split, text=text,
                       vector=vector, source_image=source_image)


def write_corpus(path, records, name="fixture", dimension=0, class_list=None):
    manifest = build_manifest(name, dimension, records, class_list)
    save_corpus(path, manifest, records)
    return path


def embedded_corpus(rng, n_classes, per_class, dim, split, scale=1.0, prefix=""):
    """Gaussian class clusters: unit-norm centers, isotropic noise of `scale`."""
    centers = rng.standard_normal((n_classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    records = []
    for c in range(n_classes):
        for i in range(per_class):
            vec = centers[c] + scale * rng.standard_normal(dim)
            records.append(record(f"{prefix}{split}-{c}-{i}", f"class-{c:03d}", split,
                                  text=f"item {c} {i}", vector=vec.astype(np.float32)))
    return records, centers


@pytest.fixture
def rng():
    return np.random.default_rng(20240612)


def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion.
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\nACCEPTANCE {name}: {report.outcome.upper()}")
