"""Synthetic nested-tumour images with a hierarchical 5-label structure.

Labels follow the BraTS convention: 0 background, 1 necrotic core, 2 edema,
3 non-enhancing core, 4 enhancing tumour. Each sample has a whole-tumour
blob (edema) enclosing a core blob split angularly into necrotic and
non-enhancing tissue, which in turn encloses an enhancing blob.

Randomness comes from numpy's PCG64 generator. Sample ``k`` uses the
``k``-th child of ``SeedSequence(seed)``, so a sample does not depend on how
many others are generated or in which order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

N_LABELS = 5

# class-conditional intensity means, rows = label, columns = modality
CLASS_MEANS = np.array(
    [
        [0.0, 0.0, 0.0, 0.0],
        [1.0, 0.3, 0.5, 0.9],
        [1.6, 0.1, 1.2, 0.2],
        [1.2, 0.6, 0.7, 0.6],
        [1.3, 1.6, 0.9, 0.5],
    ]
)

MAGIC = b"WDSD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIHH")


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    size: int = 64
    fractions: tuple[float, float, float, float] = (0.02, 0.10, 0.03, 0.01)
    noise: float = 0.5
    modalities: int = 2
    samples: int = 10
    seed: int = 0
    jitter: float = 0.12

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        if self.size < 16:
            raise SynthConfigError("image size must be at least 16")
        if len(self.fractions) != 4 or any(f < 0 for f in self.fractions):
            raise SynthConfigError("need four nonnegative class fractions (labels 1-4)")
        if sum(self.fractions) >= 1:
            raise SynthConfigError("class fractions must sum to less than 1")
        if self.modalities < 1 or self.samples < 0:
            raise SynthConfigError("modalities must be >= 1 and samples >= 0")
        if self.noise < 0:
            raise SynthConfigError("noise level must be nonnegative")
        if not 0 <= self.jitter < 0.5:
            raise SynthConfigError("shape jitter must lie in [0, 0.5)")
        # the whole-tumour blob at its largest radius must fit inside the image
        whole = sum(self.fractions)
        r_max = np.sqrt(whole * self.size**2 / np.pi) * 1.2 * (1 + 3 * self.jitter)
        if r_max > self.size / 2 - 1:
            raise SynthConfigError(f"regions with total fraction {whole:.3f} cannot fit in a {self.size}px image")


def class_means(modalities: int) -> np.ndarray:
    idx = np.arange(modalities) % CLASS_MEANS.shape[1]
    return CLASS_MEANS[:, idx]


def _blob(rng, size, cx, cy, area, jitter):
    """Mask of a randomly rotated, radially perturbed ellipse of given area."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    aspect = rng.uniform(0.7, 1.4)
    a = np.sqrt(area / np.pi * aspect)
    b = np.sqrt(area / np.pi / aspect)
    rot = rng.uniform(0, np.pi)
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(rot) + dy * np.sin(rot)
    v = -dx * np.sin(rot) + dy * np.cos(rot)
    theta = np.arctan2(v, u)
    r = np.hypot(u / a, v / b)
    bump = np.ones_like(theta)
    for k in (2, 3, 5):
        bump += jitter * rng.uniform(-1, 1) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    return r <= bump


def _erode(mask):
    """Drop voxels with a 4-neighbour outside ``mask`` (image edge counts as outside)."""
    pad = np.pad(mask, 1, constant_values=False)
    return mask & pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]


def _sample(config: SynthConfig, seq: np.random.SeedSequence):
    rng = np.random.default_rng(seq)
    n = config.size
    f1, f2, f3, f4 = config.fractions
    total = n * n
    whole_area = (f1 + f2 + f3 + f4) * total
    core_area = (f1 + f3 + f4) * total
    enh_area = f4 * total

    r_whole = np.sqrt(whole_area / np.pi)
    margin = r_whole * 1.2 * (1 + 3 * config.jitter) + 1
    cx, cy = rng.uniform(margin, n - margin, size=2) if n - 2 * margin > 0 else (n / 2, n / 2)
    whole = _blob(rng, n, cx, cy, whole_area, config.jitter)

    r_core = np.sqrt(core_area / np.pi)
    off = rng.uniform(-1, 1, size=2) * 0.3 * max(r_whole - r_core, 0)
    core = _blob(rng, n, cx + off[0], cy + off[1], core_area, config.jitter) & _erode(whole)

    r_enh = np.sqrt(enh_area / np.pi)
    off = rng.uniform(-1, 1, size=2) * 0.3 * max(r_core - r_enh, 0)
    enh = _blob(rng, n, cx + off[0], cy + off[1], enh_area, config.jitter) & _erode(core)

    labels = np.zeros((n, n), dtype=np.uint8)
    labels[whole] = 2
    # necrotic / non-enhancing split by a random angular sector of the core
    yy, xx = np.mgrid[0:n, 0:n] + 0.5
    ang = np.mod(np.arctan2(yy - cy, xx - cx) - rng.uniform(0, 2 * np.pi), 2 * np.pi)
    share = f1 / (f1 + f3) if f1 + f3 > 0 else 0.0
    necrotic = ang < 2 * np.pi * share
    labels[core & necrotic] = 1
    labels[core & ~necrotic] = 3
    labels[enh] = 4

    means = class_means(config.modalities)
    image = means[labels].transpose(2, 0, 1)
    if config.noise > 0:
        image = image + rng.normal(0.0, config.noise, size=image.shape)
    return image.astype(np.float32), labels


def generate(config: SynthConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Return ``config.samples`` pairs of (image (C, H, W) float32, labels (H, W) uint8)."""
    seqs = np.random.SeedSequence(config.seed).spawn(config.samples)
    return [_sample(config, s) for s in seqs]


def class_frequencies(samples) -> np.ndarray:
    counts = np.zeros(N_LABELS)
    for _, labels in samples:
        counts += np.bincount(labels.ravel(), minlength=N_LABELS)[:N_LABELS]
    return counts / counts.sum()


# --- file format -------------------------------------------------------------


def write_sample(path: str | Path, image: np.ndarray, labels: np.ndarray, n_labels: int = N_LABELS) -> None:
    c, h, w = image.shape
    if labels.shape != (h, w):
        raise ValueError("label map does not match image grid")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, h, w, c, n_labels))
        fh.write(np.ascontiguousarray(image, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())


def read_sample(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated sample header")
    magic, version, h, w, c, n_labels = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a sample file")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported sample format version {version}")
    off = _HEADER.size
    n_img = c * h * w * 4
    if len(data) != off + n_img + h * w:
        raise ValueError(f"{path}: sample size does not match its header")
    image = np.frombuffer(data, dtype="<f4", count=c * h * w, offset=off).reshape(c, h, w).astype(np.float32)
    labels = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=off + n_img).reshape(h, w).copy()
    if labels.size and labels.max() >= n_labels:
        raise ValueError(f"{path}: label id out of range")
    return image, labels


def save_dataset(samples, directory: str | Path, config: SynthConfig | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k, (image, labels) in enumerate(samples):
        name = f"sample_{k:05d}.bin"
        write_sample(directory / name, image, labels)
        files.append(name)
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_labels": N_LABELS,
        "files": files,
        "config": asdict(config) if config is not None else None,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return directory


def load_dataset(directory: str | Path) -> list[tuple[np.ndarray, np.ndarray]]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    return [read_sample(directory / name) for name in manifest["files"]]
