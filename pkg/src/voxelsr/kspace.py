"""Frequency-domain resolution degradation.

Low-resolution volumes are produced by zeroing the outer part of the 3D
discrete Fourier spectrum along the chosen axes (the MR phase/slice
encoding directions) and inverse-transforming, which keeps the matrix
size unchanged. `decimate` instead crops the spectrum and inverse
transforms at the reduced matrix size, providing the small-matrix input
for the interpolation baselines.

Conventions: unnormalized forward FFT, 1/N inverse. For an axis of
length n truncated by factor f, the kept frequencies are |w| <= m with
m = ceil(n / (2 f)) - 1; the Nyquist line is zeroed so the mask stays
conjugate-symmetric and the output real.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import Volume3D


@dataclass(frozen=True, eq=False)
class ComplexVolume:
    """Complex scalar field, same grid layout as Volume3D.

    `centered` tells whether the zero-frequency term sits at the array
    center (fftshift applied) rather than at index 0.
    """

    values: np.ndarray
    centered: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.ndim != 3:
            raise ValueError(f"complex volume must be 3D, got shape {v.shape}")
        if not (np.all(np.isfinite(v.real)) and np.all(np.isfinite(v.imag))):
            raise ValueError("complex volume contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def dims(self):
        return self.values.shape


@dataclass(frozen=True)
class DegradeSpec:
    """Per-axis integer resolution reduction.

    factors holds one integer per axis; axes lists the truncated axes and
    is inferred from the factors when omitted. Factors on non-truncated
    axes must be 1 and on truncated axes >= 2.
    """

    factors: tuple = (2, 2, 1)
    axes: tuple = None

    def __post_init__(self):
        f = tuple(int(x) for x in self.factors)
        if len(f) != 3 or any(x < 1 for x in f):
            raise ValueError(f"factors must be 3 integers >= 1, got {self.factors}")
        axes = self.axes
        if axes is None:
            axes = tuple(i for i in range(3) if f[i] > 1)
        else:
            axes = tuple(sorted(int(a) for a in axes))
            if any(a not in (0, 1, 2) for a in axes):
                raise ValueError(f"axes must be a subset of (0, 1, 2), got {self.axes}")
            for i in range(3):
                if i in axes and f[i] < 2:
                    raise ValueError(f"axis {i} is truncated but factor is {f[i]} (< 2)")
                if i not in axes and f[i] != 1:
                    raise ValueError(f"axis {i} is not truncated but factor is {f[i]} (!= 1)")
        object.__setattr__(self, "factors", f)
        object.__setattr__(self, "axes", axes)

    @property
    def total_factor(self):
        out = 1
        for f in self.factors:
            out *= f
        return out


def forward_fft3(vol: Volume3D) -> ComplexVolume:
    """Unnormalized forward DFT along all three axes."""
    return ComplexVolume(values=np.fft.fftn(vol.values.astype(np.float64)), centered=False)


def inverse_fft3(kv: ComplexVolume) -> ComplexVolume:
    """Inverse DFT scaled by 1/(nx ny nz); inverts forward_fft3."""
    if kv.centered:
        raise ValueError("inverse_fft3 expects an uncentered spectrum")
    return ComplexVolume(values=np.fft.ifftn(kv.values), centered=False)


def _kept_count(n: int, factor: int) -> int:
    """Half-width m of the kept band |w| <= m for one truncated axis."""
    return -(-n // (2 * factor)) - 1  # ceil(n / 2f) - 1


def _check_divisible(dims, spec: DegradeSpec):
    for axis in spec.axes:
        if dims[axis] % spec.factors[axis] != 0:
            raise ValueError(
                f"axis {axis} length {dims[axis]} not divisible by factor {spec.factors[axis]}"
            )


def truncation_mask(dims, spec: DegradeSpec) -> np.ndarray:
    """Boolean keep-mask over unshifted DFT indices.

    The mask is the outer product of per-axis keep vectors and is
    symmetric under index negation mod n, hence conjugate-symmetric.
    """
    dims = tuple(int(d) for d in dims)
    _check_divisible(dims, spec)
    mask = np.ones(dims, dtype=bool)
    for axis in spec.axes:
        n, f = dims[axis], spec.factors[axis]
        m = _kept_count(n, f)
        freqs = np.minimum(np.arange(n), n - np.arange(n))  # |w| in unshifted order
        keep = freqs <= m
        shape = [1, 1, 1]
        shape[axis] = n
        mask &= keep.reshape(shape)
    return mask


def degrade(vol: Volume3D, spec: DegradeSpec) -> Volume3D:
    """Same-size low-resolution version of vol: mask the spectrum, invert.

    The imaginary residual of the inverse transform must stay below
    1e-4 * max|vol|; a larger residual means the mask lost its conjugate
    symmetry and is reported as an error.
    """
    _check_divisible(vol.dims, spec)
    spectrum = np.fft.fftn(vol.values.astype(np.float64))
    spectrum *= truncation_mask(vol.dims, spec)
    out = np.fft.ifftn(spectrum)
    scale = np.abs(vol.values).max()
    resid = np.abs(out.imag).max()
    if scale > 0 and resid >= 1e-4 * scale:
        raise RuntimeError(
            f"imaginary residual {resid:.3e} exceeds 1e-4 * max|vol| = {1e-4 * scale:.3e}"
        )
    return Volume3D(values=out.real.astype(np.float32), spacing=vol.spacing)


def decimate(vol: Volume3D, spec: DegradeSpec) -> Volume3D:
    """Reduced-matrix low-resolution version of vol.

    Keeps exactly the truncation_mask lines of the spectrum, re-indexed
    into an (n/f)-point spectrum per truncated axis (Nyquist slot left
    zero), inverse transforms at the reduced size, and rescales so a
    constant volume maps to the same constant.
    """
    _check_divisible(vol.dims, spec)
    if not spec.axes:
        return Volume3D(values=vol.values.copy(), spacing=vol.spacing)
    spectrum = np.fft.fftn(vol.values.astype(np.float64))
    out_dims = tuple(
        vol.dims[a] // spec.factors[a] if a in spec.axes else vol.dims[a] for a in range(3)
    )
    reduced = np.zeros(out_dims, dtype=np.complex128)
    src_idx, dst_idx = [], []
    for axis in range(3):
        n, n_out = vol.dims[axis], out_dims[axis]
        if axis in spec.axes:
            m = _kept_count(n, spec.factors[axis])
            pos = np.arange(m + 1)
            neg = np.arange(n - m, n)
            src = np.concatenate([pos, neg])
            dst = np.concatenate([pos, neg - n + n_out])
        else:
            src = dst = np.arange(n)
        src_idx.append(src)
        dst_idx.append(dst)
    reduced[np.ix_(*dst_idx)] = spectrum[np.ix_(*src_idx)]
    out = np.fft.ifftn(reduced) / spec.total_factor
    spacing = tuple(s * f for s, f in zip(vol.spacing, spec.factors))
    return Volume3D(values=out.real.astype(np.float32), spacing=spacing)
