from __future__ import annotations

import json

import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def rng():
    return np.random.default_rng(988231)


def write_items(path, items):
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item) + "\n")
    return path


def make_images(directory, ids, rng, size=24):
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for item_id in ids:
        arr = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
        path = directory / f"{item_id}.png"
        Image.fromarray(arr).save(path)
        paths[item_id] = path
    return paths


def write_bundles(path, bundles):
    with open(path, "w", encoding="utf-8") as fh:
        for bundle in bundles:
            fh.write(json.dumps(bundle) + "\n")
    return path


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\nACCEPTANCE {name}: {report.outcome.upper()}")
