"""Five-band patches to network-ready 3-channel composites.

The pipeline is: sensor normalization (raw digital numbers to reflectance
in [0, 1]), SWIR-into-RGB band fusion so hot surfaces stay visible after
the lava darkens, bicubic resize to 512x512, and training-time
augmentation (dihedral-4 symmetries plus white Gaussian noise).

Band fusion, with a scale factor alpha (default 2.5) per visible channel:

    RED   = alpha * red   + max(0, swir2 - 0.1)
    GREEN = alpha * green + max(0, swir1 - 0.1)
    BLUE  = alpha * blue

All three channels are clipped to [0, 1] afterwards; the formula can
exceed 1 and the composites feed a display-range-bounded network input.
"""

from __future__ import annotations

import datetime
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import (
    InvalidParameterError,
    ModelFormatError,
    ProfileError,
    ShapeError,
)
from .tensor import RngStream

COMPOSITE_SIZE = (512, 512)
DEFAULT_ALPHA = 2.5
SWIR_FLOOR = 0.1
CUBIC_A = -0.75

BAND_ORDER = ("blue", "green", "red", "swir1", "swir2")

PATCH_MAGIC = b"VBP1"
COMPOSITE_MAGIC = b"VRC1"


class Sensor(IntEnum):
    SENTINEL2 = 0
    LANDSAT7 = 1
    SYNTHETIC = 2


@dataclass(frozen=True)
class SensorProfile:
    """Per-band affine normalization to reflectance, plus native resolution.

    scale/offset are 5-tuples in BAND_ORDER. Sentinel-2 L1C stores TOA
    reflectance scaled by 10000; the Landsat-7 level-2 scaling is treated
    as the same configurable affine by default.
    """
    sensor: Sensor
    scale: tuple
    offset: tuple
    resolution_m: float

    def __post_init__(self):
        if len(self.scale) != 5 or len(self.offset) != 5:
            raise InvalidParameterError("profile needs 5 per-band scale/offset values")
        if any(s <= 0 for s in self.scale):
            raise InvalidParameterError("profile scales must be > 0")


def _uniform_profile(sensor, scale, offset, res):
    return SensorProfile(sensor, (scale,) * 5, (offset,) * 5, res)


PROFILES = {
    Sensor.SENTINEL2: _uniform_profile(Sensor.SENTINEL2, 1.0 / 10000.0, 0.0, 10.0),
    Sensor.LANDSAT7: _uniform_profile(Sensor.LANDSAT7, 1.0 / 10000.0, 0.0, 30.0),
    Sensor.SYNTHETIC: _uniform_profile(Sensor.SYNTHETIC, 1.0, 0.0, 10.0),
}


@dataclass
class BandPatch:
    """Five georeferenced (H, W) band planes plus acquisition metadata."""
    blue: np.ndarray
    green: np.ndarray
    red: np.ndarray
    swir1: np.ndarray
    swir2: np.ndarray
    sensor: Sensor
    center_lat: float
    center_lon: float
    acquired: datetime.date

    def bands(self):
        return (self.blue, self.green, self.red, self.swir1, self.swir2)

    def validate(self):
        shape = self.blue.shape
        for name, b in zip(BAND_ORDER, self.bands()):
            if b.shape != shape:
                raise ShapeError(f"band {name} shape {b.shape} != {shape}")
            if not np.all(np.isfinite(b)):
                raise ShapeError(f"band {name} contains non-finite values")
        return self


@dataclass
class RgbComposite:
    """Network input: (3, 512, 512) float32 in [0, 1]."""
    pixels: np.ndarray
    provenance: str

    def validate(self):
        if self.pixels.shape != (3,) + COMPOSITE_SIZE:
            raise ShapeError(f"composite shape {self.pixels.shape}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ShapeError("composite values outside [0, 1]")
        return self


def normalize_sensor(raw: BandPatch, profile: SensorProfile) -> BandPatch:
    """Raw digital numbers -> reflectance via the profile affine, clipped to [0, 1]."""
    if raw.sensor != profile.sensor:
        raise ProfileError(
            f"patch sensor {raw.sensor.name} != profile {profile.sensor.name}")
    out = {}
    for name, band, s, o in zip(BAND_ORDER, raw.bands(), profile.scale, profile.offset):
        out[name] = np.clip(band.astype(np.float32) * np.float32(s) + np.float32(o),
                            0.0, 1.0)
    return BandPatch(sensor=raw.sensor, center_lat=raw.center_lat,
                     center_lon=raw.center_lon, acquired=raw.acquired, **out)


def merge_bands(patch: BandPatch, alpha=DEFAULT_ALPHA) -> np.ndarray:
    """SWIR-highlighted 3-channel composite at the patch's native (H, W).

    alpha may be a scalar or a per-channel (red, green, blue) triple.
    Returns (3, H, W) float32 clipped to [0, 1], channels (RED, GREEN, BLUE).
    """
    if np.isscalar(alpha):
        ar = ag = ab = float(alpha)
    else:
        ar, ag, ab = (float(a) for a in alpha)
    red = ar * patch.red + np.maximum(0.0, patch.swir2 - SWIR_FLOOR)
    green = ag * patch.green + np.maximum(0.0, patch.swir1 - SWIR_FLOOR)
    blue = ab * patch.blue
    out = np.stack([red, green, blue]).astype(np.float32)
    return np.clip(out, 0.0, 1.0, out=out)


def _cubic_weights(t):
    """Keys cubic convolution kernel, a = -0.75."""
    at = np.abs(t)
    a = CUBIC_A
    w = np.where(
        at <= 1.0,
        (a + 2.0) * at ** 3 - (a + 3.0) * at ** 2 + 1.0,
        np.where(at < 2.0, a * (at ** 3 - 5.0 * at ** 2 + 8.0 * at - 4.0), 0.0),
    )
    return w


def _axis_taps(src_size, dst_size):
    """Tap indices (dst, 4) and weights for one resize axis, edges clamped."""
    pos = (np.arange(dst_size, dtype=np.float64) + 0.5) * (src_size / dst_size) - 0.5
    base = np.floor(pos).astype(np.int64)
    t = pos - base
    offsets = np.arange(-1, 3)
    idx = np.clip(base[:, None] + offsets[None, :], 0, src_size - 1)
    w = _cubic_weights(t[:, None] - offsets[None, :].astype(np.float64))
    return idx, w


def bicubic_resize(image: np.ndarray, target=COMPOSITE_SIZE) -> np.ndarray:
    """Cubic-convolution resample of (C, H, W) to (C, *target), clipped to [0, 1].

    Separable: rows first, then columns. Edge taps clamp to the border
    pixel. At target == source size the sample grid lands exactly on the
    input grid and the output equals the input.
    """
    if image.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got {image.shape}")
    C, H, W = image.shape
    th, tw = target
    if H < 4 or W < 4:
        raise ShapeError(f"input too small for bicubic resize: {H}x{W} (need >= 4x4)")
    iy, wy = _axis_taps(H, th)
    ix, wx = _axis_taps(W, tw)
    gathered = image[:, iy, :]                       # (C, th, 4, W)
    rows = np.einsum("ctkw,tk->ctw", gathered, wy)   # (C, th, W) float64
    gathered = rows[:, :, ix]                        # (C, th, tw, 4)
    out = np.einsum("chwk,wk->chw", gathered, wx)    # (C, th, tw)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def add_gaussian_noise(image: np.ndarray, sigma: float, rng: RngStream) -> np.ndarray:
    """Independent N(0, sigma^2) per element, result clipped to [0, 1]."""
    if sigma < 0:
        raise InvalidParameterError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return image.copy()
    noise = rng.gaussian(image.size).reshape(image.shape) * sigma
    out = image + noise.astype(image.dtype)
    return np.clip(out, 0.0, 1.0, out=out)


# Dihedral-4 elements as (quarter-turns k, horizontal-mirror m):
#   apply(k, m, x) = rot90^k(hflip^m(x)) on the trailing two axes.
_HFLIP = (0, 1)
_VFLIP = (2, 1)
_ROT90 = (1, 0)
_GENERATORS = {"hflip": _HFLIP, "vflip": _VFLIP, "rot90": _ROT90}


def _compose_sym(a, b):
    # apply b, then a; hflip conjugates rotation direction
    ka, ma = a
    kb, mb = b
    k = (ka + (kb if ma == 0 else -kb)) % 4
    return (k, (ma + mb) % 2)


def _symmetry_group(ops):
    elems = {(0, 0)}
    gens = []
    for name in ops:
        if name not in _GENERATORS:
            raise InvalidParameterError(f"unknown augmentation op {name!r}")
        gens.append(_GENERATORS[name])
    changed = True
    while changed:
        changed = False
        for a in list(elems):
            for g in gens:
                c = _compose_sym(g, a)
                if c not in elems:
                    elems.add(c)
                    changed = True
    return sorted(elems)


def apply_symmetry(image: np.ndarray, k: int, m: int) -> np.ndarray:
    out = image
    if m:
        out = out[..., ::-1]
    if k:
        out = np.rot90(out, k, axes=(-2, -1))
    return np.ascontiguousarray(out)


def augment(image: np.ndarray, rng: RngStream,
            ops=("hflip", "vflip", "rot90")) -> np.ndarray:
    """One uniformly chosen symmetry from the group generated by ops.

    With all three generators this is the full dihedral-4 group of the
    square, identity included. Rotations by an odd quarter-turn require a
    square image.
    """
    group = _symmetry_group(ops)
    choice = int(rng.integers(1, len(group))[0])
    k, m = group[choice]
    if k % 2 == 1 and image.shape[-1] != image.shape[-2]:
        raise ShapeError(
            f"rot90 needs a square image, got {image.shape[-2]}x{image.shape[-1]}")
    return apply_symmetry(image, k, m)


def compose_patch(patch: BandPatch, alpha=DEFAULT_ALPHA, target=COMPOSITE_SIZE,
                  provenance="") -> RgbComposite:
    """normalize-merge-resize product for an already-normalized patch."""
    merged = merge_bands(patch, alpha=alpha)
    pixels = bicubic_resize(merged, target=target)
    return RgbComposite(pixels=pixels, provenance=provenance)


def preprocess_raw(raw: BandPatch, profile: SensorProfile | None = None,
                   alpha=DEFAULT_ALPHA, provenance="") -> RgbComposite:
    """Full pipeline from raw digital numbers: normalize, merge, resize."""
    if profile is None:
        profile = PROFILES[raw.sensor]
    return compose_patch(normalize_sensor(raw, profile), alpha=alpha,
                         provenance=provenance)


# ---------------------------------------------------------------------------
# flat binary plane files (VBP1 five-band patches, VRC1 composites)
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sHHB")  # magic, H, W, sensor id


def _write_planes(path, magic, planes, sensor_id):
    planes = np.ascontiguousarray(planes, dtype="<f4")
    _, H, W = planes.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(magic, H, W, sensor_id))
        f.write(planes.tobytes())


def _read_planes(path, magic, n_planes):
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ModelFormatError(f"{path}: truncated header at offset {len(head)}")
        got_magic, H, W, sensor_id = _HEADER.unpack(head)
        if got_magic != magic:
            raise ModelFormatError(f"{path}: bad magic {got_magic!r} at offset 0")
        want = n_planes * H * W * 4
        data = f.read(want)
        if len(data) != want:
            raise ModelFormatError(
                f"{path}: truncated planes at offset {_HEADER.size + len(data)}")
    arr = np.frombuffer(data, dtype="<f4").reshape(n_planes, H, W)
    return arr.astype(np.float32), sensor_id


def save_band_planes(path, patch: BandPatch):
    """Write the five band planes of a patch as a VBP1 file."""
    _write_planes(path, PATCH_MAGIC, np.stack(patch.bands()), int(patch.sensor))


def load_band_planes(path):
    """Read a VBP1 file -> (planes (5, H, W) float32, Sensor)."""
    planes, sensor_id = _read_planes(path, PATCH_MAGIC, 5)
    return planes, Sensor(sensor_id)


def save_composite(path, composite: RgbComposite):
    _write_planes(path, COMPOSITE_MAGIC, composite.pixels, 0)


def load_composite(path, provenance="") -> RgbComposite:
    planes, _ = _read_planes(path, COMPOSITE_MAGIC, 3)
    return RgbComposite(pixels=planes, provenance=provenance)
