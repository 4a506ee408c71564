"""
Synthetic coastline scenes: water below a smooth seeded curve, land above,
colors sampled in HSV around per-class means, plus optional noise,
illumination changes and artifacts that mimic the failure modes the
regularizers target (speckle, water-colored land patches, ragged shores).
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import logging as log

from .grids import HsvImage, LabelMask, RgbImage, hsv_to_rgb
from .netpbm import PROB_MAXVAL, read_image, read_label_mask, write_image, write_label_mask
from .utils import DatasetError, InvalidParameter, PathLike, atomic_write_text, require_open_unit


Hsv = Tuple[float, float, float]
Sinusoid = Tuple[float, float, float]

FAMILIES = ("flat", "wavy", "ragged")
MANIFEST_NAME = "manifest.txt"


def hsv_distance(a: Hsv, b: Hsv) -> float:
    dh = abs(a[0] - b[0])
    dh = min(dh, 1.0 - dh)
    return float(np.sqrt(dh ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2))


@dataclass(frozen=True)
class SceneSpec:
    height: int = 32
    width: int = 32
    family: str = "flat"
    base_level: float = 0.5
    # (amplitude as a fraction of height, cycles across the width, phase)
    sinusoids: Tuple[Sinusoid, ...] = ()
    raggedness: float = 0.0
    water_hsv: Hsv = (0.58, 0.45, 0.45)
    water_jitter: float = 0.03
    land_hsv: Hsv = (0.22, 0.45, 0.55)
    land_jitter: float = 0.05
    min_separation: float = 0.15
    noise: float = 0.02
    illumination: float = 0.0
    speckle_blobs: int = 0
    false_water_patches: int = 0
    blob_radius: int = 1
    seed: int = 0
    require_both_classes: bool = True

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InvalidParameter(f"scene size must be positive, got {self.height}x{self.width}")
        if len(self.sinusoids) > 3:
            raise InvalidParameter("a coastline is the sum of at most 3 sinusoids")
        if hsv_distance(self.water_hsv, self.land_hsv) < self.min_separation:
            raise InvalidParameter(
                f"water and land HSV means closer than {self.min_separation}"
            )
        if not 0.0 <= self.illumination < 1.0:
            raise InvalidParameter(f"illumination must lie in [0, 1), got {self.illumination}")


def coastline_curve(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Row of the water line for every column; water lies at and below it."""
    x = np.arange(spec.width, dtype=np.float64)
    curve = np.full(spec.width, spec.base_level * spec.height)
    for amplitude, cycles, phase in spec.sinusoids:
        curve += amplitude * spec.height * np.sin(2.0 * np.pi * cycles * x / spec.width + phase)
    if spec.raggedness > 0.0:
        curve += spec.raggedness * spec.height * rng.uniform(-1.0, 1.0, spec.width)
    return np.clip(curve, 0.0, float(spec.height))


def _sample_hsv(rng, mean: Hsv, jitter: float, shape) -> Tuple[np.ndarray, ...]:
    h = np.mod(mean[0] + jitter * rng.uniform(-1.0, 1.0, shape), 1.0)
    s = np.clip(mean[1] + jitter * rng.uniform(-1.0, 1.0, shape), 0.0, 1.0)
    v = np.clip(mean[2] + jitter * rng.uniform(-1.0, 1.0, shape), 0.0, 1.0)
    return h, s, v


def _blob(shape, center, radius) -> np.ndarray:
    rows, cols = np.indices(shape)
    return np.maximum(np.abs(rows - center[0]), np.abs(cols - center[1])) <= radius


def generate(spec: SceneSpec) -> Tuple[RgbImage, LabelMask]:
    rng = np.random.default_rng(spec.seed)
    shape = (spec.height, spec.width)
    curve = coastline_curve(spec, rng)
    labels = (np.arange(spec.height)[:, None] >= curve[None, :]).astype(np.float64)
    if spec.require_both_classes and (labels.min() == labels.max()):
        raise InvalidParameter(f"scene {spec.seed}: coastline leaves one class empty")

    water = labels > 0
    wh, ws, wv = _sample_hsv(rng, spec.water_hsv, spec.water_jitter, shape)
    lh, ls, lv = _sample_hsv(rng, spec.land_hsv, spec.land_jitter, shape)
    h, s, v = np.where(water, wh, lh), np.where(water, ws, ls), np.where(water, wv, lv)

    land_pixels = np.argwhere(~water)
    for _ in range(spec.false_water_patches):
        if len(land_pixels) == 0:
            break
        center = land_pixels[rng.integers(len(land_pixels))]
        patch = _blob(shape, center, spec.blob_radius) & ~water
        h, s, v = np.where(patch, wh, h), np.where(patch, ws, s), np.where(patch, wv, v)
    for _ in range(spec.speckle_blobs):
        center = (rng.integers(spec.height), rng.integers(spec.width))
        blob = _blob(shape, center, spec.blob_radius)
        s = np.where(blob, rng.uniform(0.0, 0.1), s)
        v = np.where(blob, rng.uniform(0.85, 1.0), v)

    gain = 1.0 + spec.illumination * rng.uniform(-1.0, 1.0)
    v = np.clip(v * gain, 0.0, 1.0)
    rgb = hsv_to_rgb(HsvImage(h, s, v)).to_array()
    if spec.noise > 0.0:
        rgb = rgb + spec.noise * rng.standard_normal(rgb.shape)
    # quantized like the 16-bit PPM files, so disk and memory agree bit for bit
    rgb = np.rint(np.clip(rgb, 0.0, 1.0) * PROB_MAXVAL) / PROB_MAXVAL
    return RgbImage.from_array(rgb), labels


def family_spec(family: str, seed: int, height: int = 32, width: int = 32) -> SceneSpec:
    """Default scene spec of one coastline-shape family, drawn from `seed`."""
    rng = np.random.default_rng([seed, len(FAMILIES)])
    base = SceneSpec(
        height=height,
        width=width,
        family=family,
        base_level=float(rng.uniform(0.4, 0.6)),
        illumination=0.1,
        speckle_blobs=int(rng.integers(1, 4)),
        false_water_patches=int(rng.integers(0, 3)),
        seed=seed,
    )
    if family == "flat":
        return base
    if family == "wavy":
        count = int(rng.integers(1, 4))
        sinusoids = tuple(
            (float(rng.uniform(0.03, 0.1)), float(rng.uniform(0.5, 2.0)), float(rng.uniform(0, 2 * np.pi)))
            for _ in range(count)
        )
        return replace(base, sinusoids=sinusoids)
    if family == "ragged":
        sinusoid = (float(rng.uniform(0.03, 0.08)), float(rng.uniform(0.5, 1.5)), float(rng.uniform(0, 2 * np.pi)))
        return replace(base, sinusoids=(sinusoid,), raggedness=0.04)
    raise InvalidParameter(f"unknown coastline family `{family}`")


@dataclass
class Scene:
    name: str
    seed: int
    family: str
    split: str
    image: RgbImage
    labels: LabelMask


@dataclass
class Benchmark:
    scenes: List[Scene] = field(default_factory=list)
    seed: int = 0

    @property
    def train(self) -> List[Scene]:
        return [s for s in self.scenes if s.split == "train"]

    @property
    def validation(self) -> List[Scene]:
        return [s for s in self.scenes if s.split == "validation"]


def stratified_split(families: List[str], split_fraction: float, rng) -> List[str]:
    """
    Assign "train"/"validation" per scene so each family keeps the split
    proportion; leftover train slots go to families with the largest remainder.
    """
    count = len(families)
    n_train = min(max(int(round(count * split_fraction)), 1), count - 1)
    groups = {f: [i for i, g in enumerate(families) if g == f] for f in dict.fromkeys(families)}
    quotas = {f: int(np.floor(len(idx) * split_fraction)) for f, idx in groups.items()}
    remainders = sorted(
        groups, key=lambda f: -(len(groups[f]) * split_fraction - quotas[f])
    )
    for f in remainders[: n_train - sum(quotas.values())]:
        quotas[f] += 1

    splits = ["validation"] * count
    for f, idx in groups.items():
        for i in rng.permutation(idx)[: quotas[f]]:
            splits[int(i)] = "train"
    return splits


def make_benchmark(
    count: int, split_fraction: float = 0.8, seed: int = 0, height: int = 32, width: int = 32
) -> Benchmark:
    if count < 5:
        raise InvalidParameter(f"a benchmark needs at least 5 scenes, got {count}")
    require_open_unit(split_fraction, "split_fraction")
    scene_seeds = [
        int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(count)
    ]
    families = [FAMILIES[i % len(FAMILIES)] for i in range(count)]
    splits = stratified_split(families, split_fraction, np.random.default_rng(seed))

    scenes = []
    for i, (scene_seed, family, split) in enumerate(zip(scene_seeds, families, splits)):
        image, labels = generate(family_spec(family, scene_seed, height, width))
        scenes.append(Scene(f"scene_{i:04d}", scene_seed, family, split, image, labels))
    return Benchmark(scenes, seed)


def write_benchmark(benchmark: Benchmark, directory: PathLike) -> List[Path]:
    directory = Path(directory)
    written = []
    lines = ["# image\tlabels\tseed\tsplit\tfamily"]
    for scene in benchmark.scenes:
        image_path = Path("images") / f"{scene.name}.ppm"
        label_path = Path("labels") / f"{scene.name}.pgm"
        write_image(directory / image_path, scene.image)
        write_label_mask(directory / label_path, scene.labels)
        written += [directory / image_path, directory / label_path]
        lines.append(f"{image_path.as_posix()}\t{label_path.as_posix()}\t{scene.seed}\t{scene.split}\t{scene.family}")
    atomic_write_text(directory / MANIFEST_NAME, "\n".join(lines) + "\n")
    written.append(directory / MANIFEST_NAME)
    log.info(f"wrote {len(benchmark.scenes)} scenes to {directory}")
    return written


def read_benchmark(directory: PathLike, seed: Optional[int] = None) -> Benchmark:
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.is_file():
        raise DatasetError(f"no dataset manifest at {manifest}")

    scenes = []
    for number, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5 or parts[3] not in ("train", "validation"):
            raise DatasetError(f"{manifest}:{number}: malformed record {line!r}")
        image_path, label_path, scene_seed, split, family = parts
        image = read_image(directory / image_path)
        labels = read_label_mask(directory / label_path)
        if image.shape != labels.shape:
            raise DatasetError(f"{manifest}:{number}: image and labels differ in size")
        scenes.append(Scene(Path(image_path).stem, int(scene_seed), family, split, image, labels))
    if not scenes:
        raise DatasetError(f"{manifest} lists no scenes")
    return Benchmark(scenes, 0 if seed is None else seed)
