"""Deterministic synthetic shapes benchmark.

Each image is a float array in [0, 1] with one drawing channel (shapes plus
clutter marks on a noisy background) and two pure-noise channels. Annotations
are tight boxes around circles, squares, and triangles; clutter marks are too
small to be objects and stay unannotated. Every image derives its own RNG from
(seed, image_id), so generation is order-independent and reproducible.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import BBox, iou_matrix
from .config import GeneratorConfig

CLASS_NAMES = ("circle", "square", "triangle")


@dataclass(frozen=True)
class SyntheticSample:
    image: np.ndarray
    annotations: tuple[tuple[int, BBox], ...]
    image_id: int
    clutter_level: float


def _image_rng(seed: int, image_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, image_id]))


def _draw_circle(canvas, cx, cy, radius, intensity):
    size = canvas.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
    canvas[mask] = intensity
    return BBox(cx - radius, cy - radius, cx + radius, cy + radius)


def _draw_square(canvas, cx, cy, half_w, half_h, intensity):
    x0, x1 = cx - half_w, cx + half_w
    y0, y1 = cy - half_h, cy + half_h
    canvas[int(round(y0)) : int(round(y1)), int(round(x0)) : int(round(x1))] = intensity
    return BBox(x0, y0, x1, y1)


def _draw_triangle(canvas, cx, cy, half_w, half_h, intensity):
    # isoceles triangle: apex at the top edge of its box, base at the bottom
    size = canvas.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    x0, x1 = cx - half_w, cx + half_w
    y0, y1 = cy - half_h, cy + half_h
    below_apex = yy >= y0
    above_base = yy <= y1
    # left/right edges from apex (cx, y0) to base corners (x0, y1) / (x1, y1)
    t = np.clip((yy - y0) / max(y1 - y0, 1e-9), 0.0, 1.0)
    left = cx - t * half_w
    right = cx + t * half_w
    mask = below_apex & above_base & (xx >= left) & (xx <= right)
    canvas[mask] = intensity
    return BBox(x0, y0, x1, y1)


def _draw_clutter(canvas, rng, clutter_level):
    """Small unannotated distractor marks: dots, dashes, and ring fragments."""
    size = canvas.shape[0]
    count = int(round(clutter_level * 22))
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(count):
        kind = rng.integers(0, 3)
        intensity = rng.uniform(0.3, 0.75)
        cx, cy = rng.uniform(2, size - 2, size=2)
        if kind == 0:  # dot
            r = rng.uniform(1.0, 2.5)
            canvas[(xx - cx) ** 2 + (yy - cy) ** 2 <= r**2] = intensity
        elif kind == 1:  # short dash
            length = rng.uniform(3, 7)
            horizontal = rng.random() < 0.5
            if horizontal:
                x0, x1 = int(max(0, cx - length / 2)), int(min(size, cx + length / 2))
                canvas[int(cy) : int(cy) + 2, x0:x1] = intensity
            else:
                y0, y1 = int(max(0, cy - length / 2)), int(min(size, cy + length / 2))
                canvas[y0:y1, int(cx) : int(cx) + 2] = intensity
        else:  # ring fragment, reads locally like a shape edge
            r = rng.uniform(2.0, 4.0)
            d2 = (xx - cx) ** 2 + (yy - cy) ** 2
            canvas[(d2 <= r**2) & (d2 >= (r - 1.5) ** 2) & (yy <= cy)] = intensity


def generate_sample(seed: int, image_id: int, config: GeneratorConfig) -> SyntheticSample:
    """Generate one image; pure function of (seed, image_id, config)."""
    rng = _image_rng(seed, image_id)
    size = config.image_size
    hard = rng.random() < config.hard_fraction
    lo, hi = config.hard_object_range if hard else config.easy_object_range
    target_count = int(rng.integers(lo, hi + 1)) if config.max_objects > 0 else 0
    target_count = min(target_count, config.max_objects)
    size_range = config.hard_size_range if hard else config.easy_size_range
    clutter_range = config.hard_clutter_range if hard else config.easy_clutter_range
    clutter_level = float(rng.uniform(*clutter_range))

    canvas = np.full((size, size), config.background_level, dtype=np.float64)
    _draw_clutter(canvas, rng, clutter_level)

    annotations: list[tuple[int, BBox]] = []
    placed: list[np.ndarray] = []
    for _ in range(target_count):
        class_id = int(rng.integers(0, config.num_classes))
        intensity = float(rng.uniform(0.55, 0.95))
        for _attempt in range(30):
            w = float(rng.uniform(*size_range))
            h = w if class_id in (0, 1) else w * float(rng.uniform(0.8, 1.25))
            half_w, half_h = w / 2, h / 2
            cx = float(rng.uniform(half_w + 1, size - half_w - 1))
            cy = float(rng.uniform(half_h + 1, size - half_h - 1))
            candidate = np.array([cx - half_w, cy - half_h, cx + half_w, cy + half_h])
            if placed:
                overlap = iou_matrix(candidate, np.stack(placed)).max()
                limit = config.max_overlap_iou if hard else 0.05
                if overlap > limit:
                    continue
            if class_id == 0:
                box = _draw_circle(canvas, cx, cy, half_w, intensity)
            elif class_id == 1:
                box = _draw_square(canvas, cx, cy, half_w, half_h, intensity)
            else:
                box = _draw_triangle(canvas, cx, cy, half_w, half_h, intensity)
            if box.area < config.min_object_area:
                raise ValueError(
                    f"generated box area {box.area:.1f} below min_object_area; "
                    "size ranges are inconsistent with min_object_area"
                )
            annotations.append((class_id, box))
            placed.append(candidate)
            break

    canvas += rng.normal(0.0, config.pixel_noise, canvas.shape)
    noise = rng.normal(0.5, 0.15, (size, size, config.channels - 1))
    image = np.concatenate([canvas[:, :, None], noise], axis=2)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return SyntheticSample(
        image=image,
        annotations=tuple(annotations),
        image_id=image_id,
        clutter_level=clutter_level,
    )


def generate_dataset(seed: int, num_images: int, config: GeneratorConfig) -> list[SyntheticSample]:
    """Generate ``num_images`` samples deterministically."""
    if num_images <= 0:
        raise ValueError("num_images must be positive")
    config.validate()
    return [generate_sample(seed, i, config) for i in range(num_images)]


def split_ids(ids: list[int], test_fraction: float) -> tuple[list[int], list[int]]:
    """Deterministic train/test split: ids ordered by CRC32 hash, first chunk is test."""
    n_test = int(round(test_fraction * len(ids)))
    by_hash = sorted(ids, key=lambda i: (zlib.crc32(str(i).encode()), i))
    test = sorted(by_hash[:n_test])
    train = sorted(set(ids) - set(test))
    return train, test


@dataclass
class Dataset:
    """Samples plus the frozen train/test split used by a run."""

    samples: list[SyntheticSample]
    train_ids: list[int]
    test_ids: list[int]
    seed: int
    generator: GeneratorConfig
    _by_id: dict[int, SyntheticSample] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {s.image_id: s for s in self.samples}

    def sample(self, image_id: int) -> SyntheticSample:
        return self._by_id[image_id]

    def images(self, ids) -> np.ndarray:
        """Stack images for the given ids as (B, C, H, W) float32."""
        stack = np.stack([self._by_id[i].image for i in ids])
        return np.ascontiguousarray(stack.transpose(0, 3, 1, 2))

    def ground_truth(self, ids) -> list[tuple[int, int, BBox]]:
        out = []
        for image_id in ids:
            for class_id, box in self._by_id[image_id].annotations:
                out.append((image_id, class_id, box))
        return out


def build_dataset(
    seed: int, num_images: int, config: GeneratorConfig, test_fraction: float
) -> Dataset:
    samples = generate_dataset(seed, num_images, config)
    train, test = split_ids([s.image_id for s in samples], test_fraction)
    return Dataset(samples=samples, train_ids=train, test_ids=test, seed=seed, generator=config)


def save_dataset(dataset: Dataset, out_dir: str | Path) -> None:
    """Persist a dataset directory: meta.json, index.jsonl, and one .npy per image."""
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    from .config import config_to_dict

    meta = {
        "seed": dataset.seed,
        "num_images": len(dataset.samples),
        "generator": config_to_dict(dataset.generator),
        "train_ids": dataset.train_ids,
        "test_ids": dataset.test_ids,
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    with open(out_dir / "index.jsonl", "w") as fh:
        for sample in dataset.samples:
            rel = f"images/img_{sample.image_id:05d}.npy"
            np.save(out_dir / rel, sample.image)
            record = {
                "image_id": sample.image_id,
                "path": rel,
                "clutter_level": sample.clutter_level,
                "annotations": [
                    [class_id, box.x_min, box.y_min, box.x_max, box.y_max]
                    for class_id, box in sample.annotations
                ],
            }
            fh.write(json.dumps(record) + "\n")


def load_dataset(in_dir: str | Path) -> Dataset:
    in_dir = Path(in_dir)
    meta_path = in_dir / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(
            f"no dataset at {in_dir}; create one with `comal generate --config ... --out {in_dir}`"
        )
    meta = json.loads(meta_path.read_text())
    from .config import _from_dict

    generator = _from_dict(GeneratorConfig, meta["generator"])
    samples = []
    with open(in_dir / "index.jsonl") as fh:
        for line in fh:
            record = json.loads(line)
            image = np.load(in_dir / record["path"])
            annotations = tuple(
                (int(c), BBox(x0, y0, x1, y1)) for c, x0, y0, x1, y1 in record["annotations"]
            )
            samples.append(
                SyntheticSample(
                    image=image,
                    annotations=annotations,
                    image_id=int(record["image_id"]),
                    clutter_level=float(record["clutter_level"]),
                )
            )
    return Dataset(
        samples=samples,
        train_ids=list(meta["train_ids"]),
        test_ids=list(meta["test_ids"]),
        seed=int(meta["seed"]),
        generator=generator,
    )
