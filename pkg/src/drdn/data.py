"""Images, patch extraction, Gaussian noise, PSNR and evaluation reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from drdn import pnm
from drdn.errors import ImageTooSmall, ShapeMismatch
from drdn.network import DenoiserModel, denoise
from drdn.optimizer import PatchDataset
from drdn.tensor_core import DTYPE, Rng, fill_gaussian

PSNR_CAP = 100.0
IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


@dataclass
class Image:
    pixels: np.ndarray  # (C, H, W) float32 in [0, 1]
    name: str = ""

    @property
    def channels(self):
        return self.pixels.shape[0]

    @property
    def height(self):
        return self.pixels.shape[1]

    @property
    def width(self):
        return self.pixels.shape[2]

    def to_uint8(self) -> np.ndarray:
        return np.round(np.clip(self.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)

    @classmethod
    def from_uint8(cls, data: np.ndarray, name: str = "") -> "Image":
        return cls((np.asarray(data, dtype=DTYPE) / DTYPE(255)).astype(DTYPE), name)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise level on the 0-255 scale: a fixed sigma, or a uniform range per patch."""

    mode: str = "fixed"
    sigma: float = 25.0
    sigma_range: Tuple[float, float] = (0.0, 55.0)

    def __post_init__(self):
        if self.mode == "fixed":
            if self.sigma < 0:
                raise ValueError("sigma must be non-negative")
        elif self.mode == "blind":
            lo, hi = self.sigma_range
            if not 0 <= lo < hi:
                raise ValueError(f"blind range must satisfy 0 <= lo < hi, got {self.sigma_range}")
        else:
            raise ValueError(f"unknown noise mode {self.mode!r}")

    @classmethod
    def fixed(cls, sigma: float) -> "NoiseSpec":
        return cls("fixed", float(sigma))

    @classmethod
    def blind(cls, lo: float = 0.0, hi: float = 55.0) -> "NoiseSpec":
        return cls("blind", sigma_range=(float(lo), float(hi)))

    def draw_sigmas(self, count: int, rng: Rng) -> np.ndarray:
        if self.mode == "fixed":
            return np.full(count, self.sigma)
        lo, hi = self.sigma_range
        return rng.uniform(lo, hi, size=count)

    def describe(self) -> str:
        if self.mode == "fixed":
            return f"{self.sigma:g}"
        return f"blind{self.sigma_range[0]:g}:{self.sigma_range[1]:g}"


# ---------------------------------------------------------------- image I/O

def load_image(path: Union[str, Path]) -> Image:
    path = Path(path)
    return Image.from_uint8(pnm.read(path), path.stem)


def save_image(image: Union[Image, np.ndarray], path: Union[str, Path]):
    if not isinstance(image, Image):
        image = Image(np.asarray(image, dtype=DTYPE))
    pnm.write(path, image.to_uint8())


def list_images(directory: Union[str, Path]) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_images(directory: Union[str, Path]) -> List[Image]:
    paths = list_images(directory)
    if not paths:
        raise FileNotFoundError(f"no .pgm/.ppm images in {directory}")
    return [load_image(p) for p in paths]


# ---------------------------------------------------------------- patches and noise

def extract_patches(images: Sequence[Image], patch_size: int, count: int, rng: Rng) -> np.ndarray:
    """``count`` random crops of size ``patch_size``; returns (count, C, P, P).

    The source image is drawn uniformly, then the top-left corner uniformly
    over all valid positions in it.
    """
    if not images:
        raise ValueError("no images to extract patches from")
    channels = {im.channels for im in images}
    if len(channels) != 1:
        raise ShapeMismatch(f"images mix channel counts {sorted(channels)}")
    for im in images:
        if im.height < patch_size or im.width < patch_size:
            raise ImageTooSmall(
                f"image {im.name or '?'} is {im.height}x{im.width}, smaller than patch {patch_size}"
            )
    which = rng.integers(0, len(images), size=count)
    out = np.empty((count, channels.pop(), patch_size, patch_size), dtype=DTYPE)
    for i, j in enumerate(which):
        im = images[j]
        top = int(rng.integers(0, im.height - patch_size + 1))
        left = int(rng.integers(0, im.width - patch_size + 1))
        out[i] = im.pixels[:, top:top + patch_size, left:left + patch_size]
    return out


def add_noise(clean: np.ndarray, spec: NoiseSpec, rng: Rng):
    """AWGN with sigma/255 standard deviation, unclamped.

    ``clean`` is a single (C, H, W) image or an (N, C, H, W) batch. In blind
    mode one sigma is drawn per image. Returns ``(noisy, sigmas)`` where
    ``sigmas`` is a float for a single image and an array for a batch.
    """
    clean = np.asarray(clean, dtype=DTYPE)
    single = clean.ndim == 3
    batch = clean[None] if single else clean
    sigmas = spec.draw_sigmas(batch.shape[0], rng)
    noise = fill_gaussian(batch.shape, 0.0, 1.0, rng)
    scale = (sigmas / 255.0).astype(DTYPE)[:, None, None, None]
    noisy = batch + noise * scale
    if single:
        return noisy[0], float(sigmas[0])
    return noisy, sigmas


def make_dataset(images: Sequence[Image], patch_size: int, count: int, spec: NoiseSpec,
                 seed: int = 0) -> PatchDataset:
    rng = Rng(seed)
    clean = extract_patches(images, patch_size, count, rng.spawn(1))
    noisy, sigmas = add_noise(clean, spec, rng.spawn(2))
    provenance = {
        "images": [im.name for im in images],
        "patch_size": patch_size,
        "count": count,
        "noise": spec.describe(),
        "seed": seed,
    }
    return PatchDataset(noisy, clean, np.asarray(sigmas), provenance)


# ---------------------------------------------------------------- metrics

def mse(reference: np.ndarray, test: np.ndarray) -> float:
    reference = np.asarray(reference)
    test = np.asarray(test)
    if reference.shape != test.shape:
        raise ShapeMismatch(f"shapes {reference.shape} and {test.shape} differ")
    diff = reference.astype(np.float64) - test.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(reference, test) -> float:
    """``10 log10(1 / MSE)`` on [0, 1] floats, over all channels; capped at 100 dB."""
    if isinstance(reference, Image):
        reference = reference.pixels
    if isinstance(test, Image):
        test = test.pixels
    err = mse(reference, test)
    if err == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / err))


@dataclass
class EvalRow:
    name: str
    sigma: float
    noisy_psnr: float
    denoised_psnr: float


@dataclass
class EvalReport:
    rows: List[EvalRow] = field(default_factory=list)

    @property
    def mean_noisy(self) -> float:
        return float(np.mean([r.noisy_psnr for r in self.rows]))

    @property
    def mean_denoised(self) -> float:
        return float(np.mean([r.denoised_psnr for r in self.rows]))

    @property
    def mean_sigma(self) -> float:
        return float(np.mean([r.sigma for r in self.rows]))

    def format(self) -> str:
        lines = [f"{r.name}\t{r.sigma:.4f}\t{r.noisy_psnr:.4f}\t{r.denoised_psnr:.4f}" for r in self.rows]
        lines.append(f"MEAN\t{self.mean_sigma:.4f}\t{self.mean_noisy:.4f}\t{self.mean_denoised:.4f}")
        return "\n".join(lines) + "\n"


def evaluate(model: DenoiserModel, images: Iterable[Image], spec: NoiseSpec, rng: Rng) -> EvalReport:
    """Corrupt each image, denoise it, and score both against the clean image.

    The model sees the unclamped noisy image; the noisy baseline is scored
    after clamping to [0, 1], the same range the denoised output is clamped to.
    """
    report = EvalReport()
    for im in images:
        if im.channels != model.config.io_channels:
            raise ShapeMismatch(
                f"image {im.name} has {im.channels} channels, model expects {model.config.io_channels}"
            )
        noisy, sigma = add_noise(im.pixels, spec, rng)
        restored = denoise(model, noisy[None])[0]
        report.rows.append(EvalRow(
            im.name, sigma,
            psnr(im.pixels, np.clip(noisy, 0.0, 1.0)),
            psnr(im.pixels, restored),
        ))
    if not report.rows:
        raise ValueError("no images to evaluate")
    return report


# ---------------------------------------------------------------- synthetic data

def synthetic_image(size: int, rng: Rng, channels: int = 1, name: str = "") -> Image:
    """Smooth test image: gradient + flat shapes + low-pass texture, quantised to 8 bits."""
    g = rng.generator
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    planes = []
    for _ in range(channels):
        a, b = g.uniform(-0.4, 0.4, size=2)
        img = 0.5 + a * (xx - 0.5) + b * (yy - 0.5)
        for _ in range(g.integers(1, 4)):
            kind = g.integers(0, 2)
            cy, cx = g.uniform(0, 1, size=2)
            r = g.uniform(0.1, 0.35)
            level = g.uniform(-0.3, 0.3)
            if kind == 0:
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
            else:
                mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * g.uniform(0.5, 1.5))
            img = img + level * mask
        if g.uniform() < 0.3:
            cell = int(g.integers(6, 16))
            board = ((np.arange(size)[:, None] // cell + np.arange(size)[None, :] // cell) % 2) - 0.5
            img = img + g.uniform(0.05, 0.2) * board
        texture = gaussian_filter(g.standard_normal((size, size)), sigma=g.uniform(2.0, 5.0))
        texture /= max(np.abs(texture).max(), 1e-12)
        img = img + g.uniform(0.02, 0.1) * texture
        planes.append(img)
    pixels = np.clip(np.stack(planes), 0.0, 1.0)
    return Image.from_uint8(np.round(pixels * 255).astype(np.uint8), name)


def synthetic_images(count: int, size: int, seed: int, channels: int = 1, prefix: str = "syn") -> List[Image]:
    rng = Rng(seed)
    return [synthetic_image(size, rng, channels, f"{prefix}{i:03d}") for i in range(count)]


def write_synthetic_dataset(root: Union[str, Path], n_train: int = 20, n_test: int = 10,
                            size: int = 64, channels: int = 1, seed: int = 0) -> Path:
    """Write ``<root>/train`` and ``<root>/test`` directories of synthetic PNM images."""
    root = Path(root)
    suffix = ".pgm" if channels == 1 else ".ppm"
    for split, n, offset in (("train", n_train, 0), ("test", n_test, 1)):
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        for im in synthetic_images(n, size, seed * 2 + offset, channels, prefix=f"{split}_"):
            save_image(im, d / f"{im.name}{suffix}")
    return root
