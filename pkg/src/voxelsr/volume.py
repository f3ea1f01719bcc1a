"""3D volume container, raw-f32 file I/O, synthetic phantoms, and
non-learning upsampling baselines (nearest neighbor and tricubic).

A volume lives on disk as two files: `<name>.vol` holding the raw
little-endian float32 payload (x varying fastest) and `<name>.volh`, a
plain-text `key=value` header declaring dims, spacing, dtype and order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_SPACING_MM = (0.7, 0.7, 0.7)


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Real scalar field on a regular 3D grid.

    values has shape (nx, ny, nz), dtype float32; spacing is the voxel
    size in mm per axis. All values must be finite.
    """

    values: np.ndarray
    spacing: tuple = DEFAULT_SPACING_MM

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"volume values must be 3D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("volume contains non-finite values")
        sp = tuple(float(s) for s in self.spacing)
        if len(sp) != 3 or any(s <= 0 for s in sp):
            raise ValueError(f"spacing must be 3 positive floats, got {self.spacing}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "spacing", sp)

    @property
    def dims(self):
        return self.values.shape


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters for the synthetic ellipsoid phantom generator."""

    dims: tuple = (64, 64, 64)
    n_ellipsoids: int = 12
    intensity_range: tuple = (0.0, 1.0)
    edge_sharpness: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 8 for d in self.dims):
            raise ValueError(f"phantom dims must each be >= 8, got {self.dims}")
        if self.n_ellipsoids < 1:
            raise ValueError("n_ellipsoids must be >= 1")
        lo, hi = self.intensity_range
        if not lo < hi:
            raise ValueError(f"intensity_range must satisfy lo < hi, got {self.intensity_range}")
        if self.edge_sharpness <= 0:
            raise ValueError("edge_sharpness must be positive")


def _header_payload_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix == ".volh":
        p = p.with_suffix(".vol")
    elif p.suffix != ".vol":
        p = p.with_suffix(p.suffix + ".vol") if p.suffix else p.with_suffix(".vol")
    return p, p.with_suffix(".volh")


def save_volume(vol: Volume3D, path) -> None:
    """Write `<path>.vol` (raw f32le, x fastest) and `<path>.volh`.

    Output bytes are a pure function of the volume, so identical input
    volumes produce byte-identical files.
    """
    payload_path, header_path = _header_payload_paths(path)
    nx, ny, nz = vol.dims
    header = (
        f"dims={nx},{ny},{nz}\n"
        f"spacing={vol.spacing[0]:.9g},{vol.spacing[1]:.9g},{vol.spacing[2]:.9g}\n"
        "dtype=f32le\n"
        "order=x-fastest\n"
    )
    raw = np.ascontiguousarray(vol.values.ravel(order="F"), dtype="<f4")
    header_path.write_text(header, encoding="utf-8")
    payload_path.write_bytes(raw.tobytes())


def _parse_header(header_path: Path) -> dict:
    fields = {}
    for lineno, line in enumerate(header_path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{header_path}:{lineno}: malformed header line {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    for key in ("dims", "spacing", "dtype", "order"):
        if key not in fields:
            raise ValueError(f"{header_path}: missing header field {key!r}")
    if fields["dtype"] != "f32le":
        raise ValueError(f"{header_path}: unsupported dtype {fields['dtype']!r}")
    if fields["order"] != "x-fastest":
        raise ValueError(f"{header_path}: unsupported order {fields['order']!r}")
    return fields


def load_volume(path) -> Volume3D:
    """Read a volume written by save_volume. Raises on missing files,
    malformed headers, payload/dims mismatch, or non-finite values."""
    payload_path, header_path = _header_payload_paths(path)
    if not header_path.exists():
        raise FileNotFoundError(f"missing header file {header_path}")
    if not payload_path.exists():
        raise FileNotFoundError(f"missing payload file {payload_path}")
    fields = _parse_header(header_path)
    try:
        dims = tuple(int(t) for t in fields["dims"].split(","))
        spacing = tuple(float(t) for t in fields["spacing"].split(","))
    except ValueError as exc:
        raise ValueError(f"{header_path}: unparseable dims/spacing: {exc}") from None
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ValueError(f"{header_path}: bad dims {dims}")
    raw = np.frombuffer(payload_path.read_bytes(), dtype="<f4")
    expected = dims[0] * dims[1] * dims[2]
    if raw.size != expected:
        raise ValueError(
            f"{payload_path}: payload holds {raw.size} values, header declares {expected}"
        )
    values = np.ascontiguousarray(raw.reshape(dims, order="F"))
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{payload_path}: payload contains non-finite values")
    return Volume3D(values=values, spacing=spacing)


def make_phantom(spec: PhantomSpec) -> Volume3D:
    """Deterministic soft-edged ellipsoid phantom.

    Randomly placed, randomly oriented ellipsoids with sigmoid edges sit
    on a smooth low-order background; the result is min-max mapped onto
    spec.intensity_range. Same spec (same seed) gives the same volume.
    """
    rng = np.random.default_rng(spec.seed)
    nx, ny, nz = spec.dims
    # normalized coordinates in [-1, 1] per axis
    xs = np.linspace(-1.0, 1.0, nx)
    ys = np.linspace(-1.0, 1.0, ny)
    zs = np.linspace(-1.0, 1.0, nz)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1)

    # smooth background: low-frequency cosine ramp in a random direction
    bg_dir = rng.normal(size=3)
    bg_dir /= np.linalg.norm(bg_dir)
    phase = rng.uniform(0, 2 * np.pi)
    vol = 0.15 * np.cos(np.pi * (pts @ bg_dir) + phase)

    for _ in range(spec.n_ellipsoids):
        center = rng.uniform(-0.65, 0.65, size=3)
        radii = rng.uniform(0.06, 0.45, size=3)
        amp = rng.uniform(0.3, 1.0) * rng.choice([-1.0, 1.0])
        # random rotation from QR of a Gaussian matrix
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        rel = (pts - center) @ q
        quad = (
            (rel[..., 0] / radii[0]) ** 2
            + (rel[..., 1] / radii[1]) ** 2
            + (rel[..., 2] / radii[2]) ** 2
        )
        # sigmoid edge: ~1 inside the ellipsoid, ~0 outside
        vol += amp / (1.0 + np.exp(np.clip(spec.edge_sharpness * (quad - 1.0), -60, 60)))

    lo, hi = spec.intensity_range
    vmin, vmax = vol.min(), vol.max()
    vol = lo + (hi - lo) * (vol - vmin) / (vmax - vmin)
    return Volume3D(values=np.clip(vol, lo, hi).astype(np.float32), spacing=DEFAULT_SPACING_MM)


def normalize_intensity(vol: Volume3D) -> Volume3D:
    """Affine map of the intensities onto [0, 1]. Errors on constant input."""
    v = vol.values.astype(np.float64)
    vmin, vmax = v.min(), v.max()
    if vmax <= vmin:
        raise ValueError("cannot normalize a constant volume (zero dynamic range)")
    out = (v - vmin) / (vmax - vmin)
    return Volume3D(values=out.astype(np.float32), spacing=vol.spacing)


def _check_factors(factors):
    f = tuple(int(x) for x in factors)
    if len(f) != 3 or any(x < 1 for x in f):
        raise ValueError(f"factors must be 3 integers >= 1, got {factors}")
    return f


def upsample_nearest(vol: Volume3D, factors) -> Volume3D:
    """Replicate each voxel factors-times per axis (out[u] = in[u // f])."""
    f = _check_factors(factors)
    out = vol.values
    for axis in range(3):
        if f[axis] > 1:
            out = np.repeat(out, f[axis], axis=axis)
    spacing = tuple(s / fa for s, fa in zip(vol.spacing, f))
    return Volume3D(values=out, spacing=spacing)


def _cubic_kernel(t, a=-0.5):
    """Cubic convolution weights at distances (1+t, t, 1-t, 2-t), 0 <= t < 1."""
    t = np.asarray(t, dtype=np.float64)
    t2, t3 = t * t, t * t * t
    w0 = a * (t3 - 2 * t2 + t)                      # tap at i-1, distance 1+t
    w1 = (a + 2) * t3 - (a + 3) * t2 + 1            # tap at i,   distance t
    w2 = -(a + 2) * t3 + (2 * a + 3) * t2 - a * t   # tap at i+1, distance 1-t
    w3 = a * (t2 - t3)                              # tap at i+2, distance 2-t
    return w0, w1, w2, w3


def _cubic_axis(arr, factor, axis):
    n = arr.shape[axis]
    n_out = n * factor
    # sample positions on the input grid; output u maps to u / factor so
    # that the coarse and fine grids share their on-grid samples
    s = np.arange(n_out, dtype=np.float64) / factor
    i = np.floor(s).astype(np.intp)
    t = s - i
    weights = _cubic_kernel(t)
    out = np.zeros(arr.shape[:axis] + (n_out,) + arr.shape[axis + 1 :], dtype=np.float64)
    shape = [1, 1, 1]
    shape[axis] = n_out
    for offset, w in zip((-1, 0, 1, 2), weights):
        idx = np.clip(i + offset, 0, n - 1)  # edge clamp
        out += np.take(arr, idx, axis=axis) * w.reshape(shape)
    return out


def upsample_tricubic(vol: Volume3D, factors) -> Volume3D:
    """Separable cubic-convolution upsampling (a = -0.5, edge clamp).

    Each axis needs at least 4 samples for the cubic support.
    """
    f = _check_factors(factors)
    for axis, n in enumerate(vol.dims):
        if f[axis] > 1 and n < 4:
            raise ValueError(f"axis {axis} has {n} samples, cubic interpolation needs >= 4")
    out = vol.values.astype(np.float64)
    for axis in range(3):
        if f[axis] > 1:
            out = _cubic_axis(out, f[axis], axis)
    spacing = tuple(s / fa for s, fa in zip(vol.spacing, f))
    return Volume3D(values=out.astype(np.float32), spacing=spacing)
