"""Scalar field and kernel primitives on a uniform nm grid.

Everything downstream (physics stages, losses, metrology) runs on Field2D
values: row-major float64 arrays tagged with a pixel size in nm. The
convolution here is direct (no FFT), uses reflect padding so constants are
preserved at the boundary, and exposes its exact adjoints so the autodiff
tape can reuse the same arithmetic.

Conventions:
  - arrays are indexed [row, col] = [y, x]; x is the column axis
  - kernels are odd-sized squares, applied centered
  - reflect padding mirrors about the edge pixel without repeating it
    (numpy's "reflect" mode): [a b c] -> [b a b c b]
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ContractError, DimensionError, ParameterError

DEFAULT_PIXEL_SIZE_NM = 6.328
EUV_WAVELENGTH_NM = 13.5
DEFAULT_GRID_PX = 128

# Analytic diffraction kernel: K(r) ~ sinc(r) * exp(-r^2 / 4) with r the
# radial distance rescaled by pixel_size / wavelength. The /4 lives in the
# rescaled units; sinc is the normalized sin(pi x)/(pi x).
DIFFRACTION_KERNEL_SIZE = 7
GAUSSIAN_KERNEL_SIZE = 7


@dataclass
class Field2D:
    """A real-valued image on a uniform grid, pixel_size_nm per pixel."""

    width: int
    height: int
    pixel_size_nm: float
    values: np.ndarray  # shape (height, width), float64, row-major

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DimensionError(f"field dims must be positive, got {self.width}x{self.height}")
        if self.pixel_size_nm <= 0:
            raise ParameterError(f"pixel_size_nm must be positive, got {self.pixel_size_nm}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.height, self.width):
            raise DimensionError(
                f"values shape {self.values.shape} != (height={self.height}, width={self.width})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ContractError("field values must be finite")

    @classmethod
    def from_array(cls, values, pixel_size_nm: float = DEFAULT_PIXEL_SIZE_NM) -> "Field2D":
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError(f"expected 2-D array, got ndim={arr.ndim}")
        return cls(width=arr.shape[1], height=arr.shape[0], pixel_size_nm=pixel_size_nm, values=arr)

    @classmethod
    def zeros(cls, width: int, height: int, pixel_size_nm: float = DEFAULT_PIXEL_SIZE_NM) -> "Field2D":
        return cls(width, height, pixel_size_nm, np.zeros((height, width)))

    def copy(self) -> "Field2D":
        return Field2D(self.width, self.height, self.pixel_size_nm, self.values.copy())

    def with_values(self, values: np.ndarray) -> "Field2D":
        return Field2D(self.width, self.height, self.pixel_size_nm, values)


@dataclass
class Kernel2D:
    """Odd-sized square convolution kernel."""

    size: int
    weights: np.ndarray  # shape (size, size)

    def __post_init__(self):
        if self.size <= 0 or self.size % 2 == 0:
            raise DimensionError(f"kernel size must be odd and positive, got {self.size}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.size, self.size):
            raise DimensionError(f"kernel weights shape {self.weights.shape} != ({self.size}, {self.size})")
        if not np.all(np.isfinite(self.weights)):
            raise ContractError("kernel weights must be finite")

    @classmethod
    def delta(cls, size: int = 3) -> "Kernel2D":
        w = np.zeros((size, size))
        w[size // 2, size // 2] = 1.0
        return cls(size, w)


# ---------------------------------------------------------------------------
# convolution engine (shared with the autodiff tape)
# ---------------------------------------------------------------------------


def _pad_reflect(arr: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return arr
    return np.pad(arr, ((ph, ph), (pw, pw)), mode="reflect")


@lru_cache(maxsize=64)
def _fold_index(h: int, w: int, ph: int, pw: int) -> np.ndarray:
    # source index (into the unpadded array) for each padded cell
    idx = np.arange(h * w, dtype=np.intp).reshape(h, w)
    return np.pad(idx, ((ph, ph), (pw, pw)), mode="reflect").ravel()

def _fold_reflect(gpad: np.ndarray, h: int, w: int, ph: int, pw: int) -> np.ndarray:
    """Adjoint of _pad_reflect: accumulate padded-cell gradients onto sources."""
    out = np.zeros(h * w)
    np.add.at(out, _fold_index(h, w, ph, pw), gpad.ravel())
    return out.reshape(h, w)


def conv_values(arr: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Direct centered convolution with reflect padding, same output shape."""
    k = weights.shape[0]
    p = k // 2
    h, w = arr.shape
    xp = _pad_reflect(arr, p, p)
    out = np.zeros_like(arr)
    tmp = np.empty_like(arr)
    for u in range(k):
        for v in range(k):
            np.multiply(xp[u:u + h, v:v + w], weights[u, v], out=tmp)
            out += tmp
    return out


def conv_adjoint_input(grad: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Exact adjoint of conv_values w.r.t. the input array."""
    k = weights.shape[0]
    p = k // 2
    h, w = grad.shape
    gpad = np.zeros((h + 2 * p, w + 2 * p))
    for u in range(k):
        for v in range(k):
            gpad[u:u + h, v:v + w] += weights[u, v] * grad
    return _fold_reflect(gpad, h, w, p, p)


def conv_adjoint_kernel(grad: np.ndarray, arr: np.ndarray, ksize: int) -> np.ndarray:
    """Exact adjoint of conv_values w.r.t. the kernel weights."""
    p = ksize // 2
    h, w = arr.shape
    xp = _pad_reflect(arr, p, p)
    gk = np.empty((ksize, ksize))
    for u in range(ksize):
        for v in range(ksize):
            gk[u, v] = np.sum(xp[u:u + h, v:v + w] * grad)
    return gk


def conv2d(field: Field2D, kernel: Kernel2D) -> Field2D:
    """Convolve a field with a centered kernel; reflect boundary, same shape."""
    if kernel.size > min(field.width, field.height):
        raise DimensionError(
            f"kernel size {kernel.size} exceeds field min dim {min(field.width, field.height)}"
        )
    return field.with_values(conv_values(field.values, kernel.weights))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def gaussian_weights(sigma_px: float, size: int = GAUSSIAN_KERNEL_SIZE) -> np.ndarray:
    if not math.isfinite(sigma_px) or sigma_px <= 0:
        raise ParameterError(f"gaussian sigma must be positive, got {sigma_px}")
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    e = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma_px * sigma_px))
    return e / e.sum()


def gaussian_weights_dsigma(sigma_px: float, size: int = GAUSSIAN_KERNEL_SIZE) -> np.ndarray:
    """d(normalized gaussian)/d(sigma), analytic."""
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    r2 = xx * xx + yy * yy
    e = np.exp(-r2 / (2.0 * sigma_px * sigma_px))
    z = e.sum()
    de = e * r2 / sigma_px**3
    return de / z - (e / z) * (de.sum() / z)


def gaussian_kernel(sigma_px: float, size: int = GAUSSIAN_KERNEL_SIZE) -> Kernel2D:
    return Kernel2D(size, gaussian_weights(sigma_px, size))


def diffraction_weights(
    size: int = DIFFRACTION_KERNEL_SIZE,
    pixel_size_nm: float = DEFAULT_PIXEL_SIZE_NM,
    lambda_nm: float = EUV_WAVELENGTH_NM,
) -> np.ndarray:
    if size <= 0 or size % 2 == 0:
        raise DimensionError(f"kernel size must be odd and positive, got {size}")
    if pixel_size_nm <= 0 or lambda_nm <= 0:
        raise ParameterError("pixel size and wavelength must be positive")
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    r = np.sqrt(xx * xx + yy * yy) * (pixel_size_nm / lambda_nm)
    w = np.sinc(r) * np.exp(-r * r / 4.0)
    return w / w.sum()


def diffraction_kernel(
    size: int = DIFFRACTION_KERNEL_SIZE,
    pixel_size_nm: float = DEFAULT_PIXEL_SIZE_NM,
    lambda_nm: float = EUV_WAVELENGTH_NM,
) -> Kernel2D:
    return Kernel2D(size, diffraction_weights(size, pixel_size_nm, lambda_nm))


# ---------------------------------------------------------------------------
# differential / shift primitives (value parts; adjoints in autodiff)
# ---------------------------------------------------------------------------


def gradient_l1_values(arr: np.ndarray) -> float:
    """Mean over all pixels of |forward-diff x| + |forward-diff y|.

    The last column/row is treated as replicated, i.e. contributes zero
    difference, but still counts in the mean's denominator.
    """
    h, w = arr.shape
    if h < 2 or w < 2:
        raise DimensionError(f"gradient_l1 needs at least 2x2, got {h}x{w}")
    dx = np.abs(arr[:, 1:] - arr[:, :-1]).sum()
    dy = np.abs(arr[1:, :] - arr[:-1, :]).sum()
    return float((dx + dy) / (h * w))


def gradient_l1(field: Field2D) -> float:
    return gradient_l1_values(field.values)


def shift_x_values(arr: np.ndarray, dx_px: float) -> np.ndarray:
    """Shift content along +x by dx_px via linear interpolation.

    out(x) = in(x - dx); boundary columns replicate the edge value. Exact
    for integer dx away from the boundary.
    """
    h, w = arr.shape
    if not math.isfinite(dx_px):
        raise ParameterError(f"shift must be finite, got {dx_px}")
    if abs(dx_px) >= w:
        raise DimensionError(f"|shift| {dx_px} must be < width {w}")
    k = math.floor(dx_px)
    f = dx_px - k
    cols = np.arange(w)
    c_lo = np.clip(cols - k, 0, w - 1)       # weight (1 - f)
    c_hi = np.clip(cols - k - 1, 0, w - 1)   # weight f
    return (1.0 - f) * arr[:, c_lo] + f * arr[:, c_hi]


def shift_x_columns(w: int, dx_px: float):
    """Gather columns and interpolation weight used by shift_x_values."""
    k = math.floor(dx_px)
    f = dx_px - k
    cols = np.arange(w)
    return np.clip(cols - k, 0, w - 1), np.clip(cols - k - 1, 0, w - 1), f


def fractional_shift(field: Field2D, dx_px: float) -> Field2D:
    return field.with_values(shift_x_values(field.values, dx_px))


# ---------------------------------------------------------------------------
# serialization: PGM (P2/P5, 16-bit) and exact-round-trip CSV
# ---------------------------------------------------------------------------

_PGM_MAXVAL = 65535


def write_pgm(field: Field2D, path, binary: bool = True) -> None:
    """Write a field as 16-bit PGM; value range recorded in a header comment."""
    vmin = float(field.values.min())
    vmax = float(field.values.max())
    span = vmax - vmin
    if span <= 0:
        scaled = np.zeros_like(field.values, dtype=np.uint16)
    else:
        scaled = np.round((field.values - vmin) / span * _PGM_MAXVAL).astype(np.uint16)
    header = (
        f"{'P5' if binary else 'P2'}\n"
        f"# pixel_size_nm={field.pixel_size_nm!r} vmin={vmin!r} vmax={vmax!r}\n"
        f"{field.width} {field.height}\n{_PGM_MAXVAL}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(scaled.astype(">u2").tobytes())
        else:
            for row in scaled:
                fh.write((" ".join(str(int(v)) for v in row) + "\n").encode("ascii"))


def read_pgm(path) -> Field2D:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith((b"P2", b"P5")):
        raise ContractError(f"{path}: not a P2/P5 PGM")
    binary = data.startswith(b"P5")
    # header: magic, optional comments, width height, maxval
    pixel_size, vmin, vmax = DEFAULT_PIXEL_SIZE_NM, 0.0, 1.0
    pos = 2
    tokens = []
    while len(tokens) < 3:
        if data[pos:pos + 1].isspace():
            pos += 1
            continue
        if data[pos:pos + 1] == b"#":
            end = data.index(b"\n", pos)
            comment = data[pos + 1:end].decode("ascii")
            for part in comment.split():
                if "=" in part:
                    key, val = part.split("=", 1)
                    if key == "pixel_size_nm":
                        pixel_size = float(val)
                    elif key == "vmin":
                        vmin = float(val)
                    elif key == "vmax":
                        vmax = float(val)
            pos = end + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    w, h, maxval = (int(t) for t in tokens)
    pos += 1  # single whitespace after maxval
    if binary:
        raw = np.frombuffer(data, dtype=">u2", count=w * h, offset=pos).astype(np.float64)
    else:
        raw = np.array(data[pos:].split(), dtype=np.float64)[: w * h]
    values = vmin + (raw / maxval) * (vmax - vmin) if vmax > vmin else np.full(w * h, vmin)
    return Field2D(w, h, pixel_size, values.reshape(h, w))


def write_field_csv(field: Field2D, path) -> None:
    """Flat CSV with a metadata header row; floats round-trip exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["width", "height", "pixel_size_nm"])
        writer.writerow([field.width, field.height, repr(field.pixel_size_nm)])
        for row in field.values:
            writer.writerow([repr(float(v)) for v in row])


def read_field_csv(path) -> Field2D:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["width", "height", "pixel_size_nm"]:
            raise ContractError(f"{path}: unexpected field CSV header {header}")
        meta = next(reader)
        w, h, ps = int(meta[0]), int(meta[1]), float(meta[2])
        values = np.array([[float(v) for v in row] for row in reader])
    return Field2D(w, h, ps, values)
