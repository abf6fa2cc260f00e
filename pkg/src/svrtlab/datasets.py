"""Deterministic dataset generation and storage on top of the task samplers.

Every sample gets its own child RNG keyed by (seed, task, split, index), so
datasets are reproducible byte-for-byte and independent of generation order.
Labels alternate with the sample index, which keeps every prefix of a split
class-balanced.
"""

from __future__ import annotations

import os

import numpy as np

from . import raster, tasks
from .errors import DataError

SPLIT_CODES = {"train": 0, "val": 1, "test": 2, "pool": 3, "fresh": 4}


def sample_rng(seed: int, task_id: int, split: str, index: int) -> np.random.Generator:
    if split not in SPLIT_CODES:
        raise ValueError(f"unknown split {split!r}; expected one of {sorted(SPLIT_CODES)}")
    return np.random.default_rng([int(seed), int(task_id), SPLIT_CODES[split], int(index)])


def generate_scenes(task_id: int, split: str, count: int, seed: int):
    if count % 2:
        raise ValueError("count must be even for class balance")
    return [
        tasks.sample_scene(task_id, i % 2, sample_rng(seed, task_id, split, i))
        for i in range(count)
    ]


def generate_images(task_id: int, split: str, count: int, seed: int, size: int = 128):
    """Labels (N,) uint8 and images (N, size, size) uint8."""
    if count % 2:
        raise ValueError("count must be even for class balance")
    labels = np.arange(count, dtype=np.uint64) % 2
    images = np.empty((count, size, size), dtype=np.uint8)
    for i in range(count):
        scene = tasks.sample_scene(task_id, i % 2, sample_rng(seed, task_id, split, i))
        images[i] = raster.rasterize(scene, size)
    return labels.astype(np.uint8), images


def generate_packed(task_id: int, split: str, count: int, seed: int, size: int = 128):
    labels, images = generate_images(task_id, split, count, seed, size)
    payload = raster.pack(task_id, labels, images)
    manifest = raster.DatasetManifest(
        task_id=task_id,
        split=split,
        count=count,
        seed=seed,
        generator_version=raster.GENERATOR_VERSION,
        checksum=raster.payload_checksum(payload),
    )
    return payload, manifest


def dataset_basename(task_id: int, split: str) -> str:
    return f"task{task_id:02d}_{split}"


def save_dataset(directory, task_id, split, count, seed, size=128):
    """Write <base>.bin and <base>.manifest; returns the .bin path."""
    payload, manifest = generate_packed(task_id, split, count, seed, size)
    os.makedirs(directory, exist_ok=True)
    base = os.path.join(directory, dataset_basename(task_id, split))
    tmp = base + ".bin.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, base + ".bin")
    with open(base + ".manifest.tmp", "w", encoding="utf-8") as fh:
        fh.write(manifest.to_text())
    os.replace(base + ".manifest.tmp", base + ".manifest")
    return base + ".bin"


def load_dataset(bin_path):
    """Read a packed dataset, verifying the manifest checksum and metadata."""
    with open(bin_path, "rb") as fh:
        payload = fh.read()
    manifest_path = os.path.splitext(bin_path)[0] + ".manifest"
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = raster.DatasetManifest.from_text(fh.read())
    checksum = raster.payload_checksum(payload)
    if checksum != manifest.checksum:
        raise DataError(
            f"checksum mismatch for {bin_path}: payload {checksum}, manifest {manifest.checksum}"
        )
    task_id, labels, images = raster.unpack(payload)
    if task_id != manifest.task_id or len(labels) != manifest.count:
        raise DataError(
            f"manifest disagrees with payload for {bin_path}: "
            f"task {manifest.task_id} vs {task_id}, count {manifest.count} vs {len(labels)}"
        )
    return manifest, labels, images


def generate_pool(task_ids, count_per_task, seed, size=128, split="pool"):
    """Concatenated multi-task set, ordered by (task, index) for determinism.

    Returns (task_arr, labels, images).
    """
    task_arr = []
    all_labels = []
    all_images = []
    for tid in task_ids:
        labels, images = generate_images(tid, split, count_per_task, seed, size)
        task_arr.append(np.full(count_per_task, tid, dtype=np.int16))
        all_labels.append(labels)
        all_images.append(images)
    return (
        np.concatenate(task_arr),
        np.concatenate(all_labels),
        np.concatenate(all_images),
    )
