"""Synthetic haze generation and on-disk paired datasets.

Layout of a dataset root::

    root/manifest.json
    root/hazy/<id>.png     8-bit RGB
    root/clean/<id>.png    8-bit RGB
    root/trans/<id>.png    16-bit gray, only when has_transmission
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from prdehaze.physics import T_MIN, synthesize_haze, transmission_from_depth

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SPLITS = ("train", "val", "test")
T_SCALE = 65535


@dataclass
class Sample:
    I: torch.Tensor                   # (3, H, W)
    J: torch.Tensor                   # (3, H, W)
    t: Optional[torch.Tensor] = None  # (1, H, W)
    A: Optional[torch.Tensor] = None  # (3,)
    id: str = ""


@dataclass
class DatasetManifest:
    root: Path
    split: str
    has_transmission: bool
    ids: list
    atmospheric_light: Optional[dict] = None

    @property
    def count(self):
        return len(self.ids)

    def files(self, sample_id):
        files = {"hazy": self.root / "hazy" / f"{sample_id}.png",
                 "clean": self.root / "clean" / f"{sample_id}.png"}
        if self.has_transmission:
            files["trans"] = self.root / "trans" / f"{sample_id}.png"
        return files

    def to_json(self):
        doc = {"split": self.split, "has_transmission": self.has_transmission, "ids": list(self.ids)}
        if self.atmospheric_light:
            doc["atmospheric_light"] = self.atmospheric_light
        return doc

    def write(self):
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / MANIFEST).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def read(cls, root):
        root = Path(root)
        path = root / MANIFEST if root.is_dir() or not root.suffix else root
        if not path.exists():
            raise FileNotFoundError(f"no manifest at {path}")
        doc = json.loads(path.read_text())
        for key in ("split", "has_transmission", "ids"):
            if key not in doc:
                raise ValueError(f"{path}: manifest missing key {key!r}")
        if doc["split"] not in SPLITS:
            raise ValueError(f"{path}: unknown split {doc['split']!r}")
        if len(set(doc["ids"])) != len(doc["ids"]):
            raise ValueError(f"{path}: duplicate ids")
        return cls(path.parent, doc["split"], bool(doc["has_transmission"]), list(doc["ids"]),
                   doc.get("atmospheric_light"))

    def validate(self):
        for sample_id in self.ids:
            for kind, f in self.files(sample_id).items():
                if not f.exists():
                    raise FileNotFoundError(f"sample {sample_id!r}: missing {kind} file {f}")


# -- image I/O ---------------------------------------------------------------

def read_rgb(path):
    """8-bit RGB file as a (3, H, W) float tensor in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def write_rgb(path, image):
    arr = image.detach().cpu().clamp(0, 1).permute(1, 2, 0).numpy()
    arr = np.round(arr * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, "RGB").save(path)


def read_gray16(path):
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.float64) / T_SCALE
    return torch.from_numpy(arr.astype(np.float32))[None]


def write_gray16(path, t):
    arr = np.round(t.detach().cpu().clamp(0, 1).squeeze(0).numpy().astype(np.float64) * T_SCALE)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.astype(np.uint16)).save(path)


# -- synthesis ---------------------------------------------------------------

def cosine_depth(height, width, rng, d_max=5.0, ramps=3):
    """Smooth random depth: a sum of oriented cosine ramps normalized to [0, d_max]."""
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    x /= max(width - 1, 1)
    y /= max(height - 1, 1)
    d = np.zeros((height, width))
    for _ in range(ramps):
        theta = rng.uniform(0, 2 * math.pi)
        freq = rng.uniform(0.25, 1.0)
        phase = rng.uniform(0, 2 * math.pi)
        d += np.cos(2 * math.pi * freq * (x * math.cos(theta) + y * math.sin(theta)) + phase)
    span = d.max() - d.min()
    if span < 1e-12:
        return np.zeros_like(d)
    return (d - d.min()) / span * d_max


def procedural_clean_images(count, size=64, seed=0, offset=0):
    """Seeded haze-free stand-ins: shaded backgrounds with colored shapes and texture.

    Image ``n`` depends only on ``(seed, offset + n)``.
    """
    h, w = (size, size) if isinstance(size, int) else size
    images = []
    for n in range(count):
        rng = np.random.default_rng([seed, offset + n])
        y, x = np.mgrid[0:h, 0:w].astype(np.float64)
        c0, c1 = rng.uniform(0.05, 0.9, size=(2, 3))
        ramp = (x * rng.uniform(-1, 1) + y * rng.uniform(-1, 1)) / max(h, w)
        ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
        img = c0 + (c1 - c0) * ramp[..., None]
        for _ in range(rng.integers(3, 7)):
            color = rng.uniform(0.0, 0.95, size=3)
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            ry, rx = rng.uniform(h / 12, h / 3), rng.uniform(w / 12, w / 3)
            if rng.random() < 0.5:
                mask = ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1
            else:
                mask = (np.abs(y - cy) <= ry) & (np.abs(x - cx) <= rx)
            img[mask] = color
        freq = rng.uniform(4, 12)
        texture = 0.04 * np.sin(2 * math.pi * freq * x / w) * np.sin(2 * math.pi * freq * y / h)
        img = np.clip(img + texture[..., None], 0, 1)
        images.append(np.round(img * 255).astype(np.uint8))
    return images


def _load_clean(item):
    if isinstance(item, (str, Path)):
        return read_rgb(item)
    arr = np.asarray(item)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)).permute(2, 0, 1)


def generate_synthetic(clean_images, root, split="train", beta_range=(0.4, 1.6),
                       A_range=(0.7, 1.0), seed=0, d_max=5.0, depth_model=None,
                       id_prefix=None):
    """Write a hazy/clean/transmission dataset under ``root``.

    ``clean_images`` holds file paths or HxWx3 arrays. Each item draws its own
    beta and scalar light from a generator keyed on ``(seed, index)``, so the
    output is reproducible and independent of skipped items. ``depth_model``
    is a callable ``(height, width, rng) -> depth``; the default is
    :func:`cosine_depth` with ``d_max``.
    """
    lo, hi = beta_range
    if not 0 < lo <= hi:
        raise ValueError(f"beta_range must lie in (0, inf), got {beta_range}")
    a_lo, a_hi = A_range
    if not 0.6 <= a_lo <= a_hi <= 1.0:
        raise ValueError(f"A_range must lie in [0.6, 1.0], got {A_range}")
    if depth_model is None:
        depth_model = lambda h, w, rng: cosine_depth(h, w, rng, d_max)
    root = Path(root)
    prefix = id_prefix if id_prefix is not None else split
    ids, lights = [], {}
    for index, item in enumerate(clean_images):
        try:
            J = _load_clean(item)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable clean image %s: %s", item, exc)
            continue
        rng = np.random.default_rng([seed, index])
        beta = rng.uniform(lo, hi)
        a = rng.uniform(a_lo, a_hi)
        h, w = J.shape[-2:]
        depth = torch.from_numpy(depth_model(h, w, rng)).to(torch.float64)[None]
        t = transmission_from_depth(depth, beta)
        # synthesize from the quantized clean/transmission values actually stored on disk
        J = torch.round(J.double() * 255) / 255
        t = (torch.round(t * T_SCALE) / T_SCALE).clamp(min=T_MIN)
        A = torch.full((3,), a, dtype=torch.float64)
        I = synthesize_haze(J, t, A)
        sample_id = f"{prefix}_{index:05d}"
        write_rgb(root / "clean" / f"{sample_id}.png", J)
        write_rgb(root / "hazy" / f"{sample_id}.png", I)
        write_gray16(root / "trans" / f"{sample_id}.png", t)
        ids.append(sample_id)
        lights[sample_id] = [round(a, 12)] * 3
    manifest = DatasetManifest(root, split, True, ids, lights)
    manifest.write()
    return manifest


def build_manifest(root, split="test"):
    """Manifest for a directory of real pairs (``hazy/`` and ``clean/`` with matching names)."""
    root = Path(root)
    hazy = {p.stem for p in (root / "hazy").glob("*.png")}
    clean = {p.stem for p in (root / "clean").glob("*.png")}
    if hazy != clean:
        raise ValueError(f"unpaired files under {root}: {sorted(hazy ^ clean)[:5]}")
    has_t = (root / "trans").is_dir() and all((root / "trans" / f"{i}.png").exists() for i in hazy)
    manifest = DatasetManifest(root, split, has_t and bool(hazy), sorted(hazy))
    manifest.write()
    return manifest


# -- loading -----------------------------------------------------------------

def center_crop(x, size):
    h, w = x.shape[-2:]
    if size > min(h, w):
        raise ValueError(f"crop {size} larger than image {h}x{w}")
    top, left = (h - size) // 2, (w - size) // 2
    return x[..., top:top + size, left:left + size]


def _read_sample(manifest, sample_id, crop):
    files = manifest.files(sample_id)
    try:
        I, J = read_rgb(files["hazy"]), read_rgb(files["clean"])
        t = read_gray16(files["trans"]) if manifest.has_transmission else None
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"sample {sample_id!r}: {exc}") from exc
    except OSError as exc:
        raise OSError(f"sample {sample_id!r}: cannot decode image: {exc}") from exc
    if I.shape != J.shape:
        raise ValueError(f"sample {sample_id!r}: hazy {tuple(I.shape)} vs clean {tuple(J.shape)}")
    if t is not None and t.shape[-2:] != I.shape[-2:]:
        raise ValueError(f"sample {sample_id!r}: transmission size mismatch")
    A = None
    if manifest.atmospheric_light and sample_id in manifest.atmospheric_light:
        A = torch.tensor(manifest.atmospheric_light[sample_id], dtype=torch.float32)
    if crop:
        I, J = center_crop(I, crop), center_crop(J, crop)
        t = center_crop(t, crop) if t is not None else None
    return Sample(I, J, t, A, sample_id)


def load_dataset(manifest, crop=None, workers=0):
    """Yield samples in manifest id order; ``workers`` threads may prefetch."""
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.read(manifest)
    manifest.validate()
    read = lambda i: _read_sample(manifest, i, crop)
    if workers and manifest.count > 1:
        with ThreadPoolExecutor(workers) as pool:
            # map preserves input order regardless of completion order
            yield from pool.map(read, manifest.ids)
    else:
        for sample_id in manifest.ids:
            yield read(sample_id)
