"""Five-stage differentiable optics model with learnable physics scalars.

Stage order is fixed: diffraction -> absorption -> blur -> phase -> contrast.
Each learnable scalar lives as an unconstrained raw value; bounded effective
parameters come out of squashing activations, so any finite raw maps strictly
inside its physical range:

    diffraction strength  sigmoid(raw) * 0.5          in (0, 0.5)
    absorption coeff      sigmoid(raw) * 0.3          in (0, 0.3)
    blur sigma (px)       sigmoid(raw) * 3.0 + 0.5    in (0.5, 3.5)
    phase shift (rad)     tanh(raw) * 0.5             in (-0.5, 0.5)
    contrast factor       sigmoid(raw) * 2.0          in (0, 2.0)

All raws at zero give the neutral midpoint model (d=0.25, a=0.15,
sigma=2.0 px, phase=0, c=1.0). Blur at sigma <= 0.6 px is an exact
passthrough. The phase stage displaces a 20% copy of the field by
phase * wavelength / (2 pi pixel) * 10 pixels along x.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import field as fd
from .autodiff import BLUR_PASSTHROUGH_SIGMA_PX, Node, Tape
from .errors import ParameterError

PHASE_DISPLACEMENT_GAIN = 10.0  # converts phase radians to a visible px shift


@dataclass
class PhysicsParams:
    """Unconstrained raw learnables, one per stage."""

    raw_diffraction: float = 0.0
    raw_absorption: float = 0.0
    raw_blur: float = 0.0
    raw_phase: float = 0.0
    raw_contrast: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {
            "raw_diffraction": self.raw_diffraction,
            "raw_absorption": self.raw_absorption,
            "raw_blur": self.raw_blur,
            "raw_phase": self.raw_phase,
            "raw_contrast": self.raw_contrast,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicsParams":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass
class EffectiveParams:
    """Bounded physical parameters after activation."""

    diffraction: float
    absorption: float
    blur_sigma_px: float
    phase_rad: float
    contrast: float
    pixel_size_nm: float = fd.DEFAULT_PIXEL_SIZE_NM

    @property
    def blur_nm(self) -> float:
        return self.blur_sigma_px * self.pixel_size_nm

    def as_json_dict(self) -> dict[str, float]:
        return {
            "diffraction": self.diffraction,
            "absorption": self.absorption,
            "blur_nm": self.blur_nm,
            "phase_rad": self.phase_rad,
            "contrast": self.contrast,
        }


@dataclass(frozen=True)
class StageFlags:
    """Which stages run; disabled stages pass the field through unchanged."""

    diffraction: bool = True
    absorption: bool = True
    blur: bool = True
    phase: bool = True
    contrast: bool = True

    @classmethod
    def none(cls) -> "StageFlags":
        return cls(False, False, False, False, False)

    @classmethod
    def all(cls) -> "StageFlags":
        return cls()


# cumulative ablation ladder, labels fixed by the reporting format
ABLATION_STAGES: tuple[tuple[str, StageFlags], ...] = (
    ("no_physics", StageFlags(False, False, False, False, False)),
    ("+diffraction", StageFlags(True, False, False, False, False)),
    ("+absorption", StageFlags(True, True, False, False, False)),
    ("+blur", StageFlags(True, True, True, False, False)),
    ("+phase", StageFlags(True, True, True, True, False)),
    ("full_physics", StageFlags(True, True, True, True, True)),
)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def activate(params: PhysicsParams, pixel_size_nm: float = fd.DEFAULT_PIXEL_SIZE_NM) -> EffectiveParams:
    """Map raw learnables to bounded effective parameters."""
    for name, value in params.as_dict().items():
        if not math.isfinite(value):
            raise ParameterError(f"{name} must be finite, got {value}")
    return EffectiveParams(
        diffraction=_sigmoid(params.raw_diffraction) * 0.5,
        absorption=_sigmoid(params.raw_absorption) * 0.3,
        blur_sigma_px=_sigmoid(params.raw_blur) * 3.0 + 0.5,
        phase_rad=math.tanh(params.raw_phase) * 0.5,
        contrast=_sigmoid(params.raw_contrast) * 2.0,
        pixel_size_nm=pixel_size_nm,
    )


def phase_displacement_px(phase_rad: float, pixel_size_nm: float,
                          lambda_nm: float = fd.EUV_WAVELENGTH_NM) -> float:
    return phase_rad * lambda_nm / (2.0 * math.pi * pixel_size_nm) * PHASE_DISPLACEMENT_GAIN


@lru_cache(maxsize=8)
def _cached_diffraction_weights(pixel_size_nm: float, lambda_nm: float) -> np.ndarray:
    return fd.diffraction_weights(fd.DIFFRACTION_KERNEL_SIZE, pixel_size_nm, lambda_nm)


def default_diffraction_kernel(pixel_size_nm: float = fd.DEFAULT_PIXEL_SIZE_NM,
                               lambda_nm: float = fd.EUV_WAVELENGTH_NM) -> fd.Kernel2D:
    return fd.Kernel2D(fd.DIFFRACTION_KERNEL_SIZE, _cached_diffraction_weights(pixel_size_nm, lambda_nm))


# ---------------------------------------------------------------------------
# plain (non-taped) stages; each takes effective parameters
# ---------------------------------------------------------------------------


def apply_diffraction(mask: fd.Field2D, d: float, kernel: fd.Kernel2D | None = None) -> fd.Field2D:
    """mask + d * (K (*) mask): proximity energy spread around features."""
    if kernel is None:
        kernel = default_diffraction_kernel(mask.pixel_size_nm)
    spread = fd.conv_values(mask.values, kernel.weights)
    return mask.with_values(mask.values + d * spread)


def apply_absorption(intensity: fd.Field2D, mask: fd.Field2D, a: float) -> fd.Field2D:
    """intensity * (1 - mask * a): attenuation where absorber sits."""
    return intensity.with_values(intensity.values * (1.0 - mask.values * a))


def apply_blur(intensity: fd.Field2D, sigma_px: float) -> fd.Field2D:
    """Gaussian blur; exact passthrough at sigma <= 0.6 px."""
    if sigma_px <= BLUR_PASSTHROUGH_SIGMA_PX:
        return intensity.with_values(intensity.values.copy())
    return intensity.with_values(fd.conv_values(intensity.values, fd.gaussian_weights(sigma_px)))


def apply_phase(intensity: fd.Field2D, phase_rad: float,
                lambda_nm: float = fd.EUV_WAVELENGTH_NM) -> fd.Field2D:
    """0.8 * I + 0.2 * shift(I): interference between direct and shifted copy."""
    dx = phase_displacement_px(phase_rad, intensity.pixel_size_nm, lambda_nm)
    shifted = fd.shift_x_values(intensity.values, dx)
    return intensity.with_values(0.8 * intensity.values + 0.2 * shifted)


def apply_contrast(intensity: fd.Field2D, c: float) -> fd.Field2D:
    """clamp(I * c, 0, 1): resist response saturates outside [0, 1]."""
    return intensity.with_values(np.clip(intensity.values * c, 0.0, 1.0))


def forward(mask: fd.Field2D, params: PhysicsParams,
            flags: StageFlags = StageFlags.all(),
            lambda_nm: float = fd.EUV_WAVELENGTH_NM) -> fd.Field2D:
    """Run the enabled stages in fixed order on a mask field."""
    eff = activate(params, mask.pixel_size_nm)
    out = mask.with_values(mask.values.copy())
    if flags.diffraction:
        out = apply_diffraction(out, eff.diffraction)
    if flags.absorption:
        out = apply_absorption(out, mask, eff.absorption)
    if flags.blur:
        out = apply_blur(out, eff.blur_sigma_px)
    if flags.phase:
        out = apply_phase(out, eff.phase_rad, lambda_nm)
    if flags.contrast:
        out = apply_contrast(out, eff.contrast)
    return out


# ---------------------------------------------------------------------------
# taped forward for training
# ---------------------------------------------------------------------------

RAW_PARAM_NAMES = ("raw_diffraction", "raw_absorption", "raw_blur", "raw_phase", "raw_contrast")


def taped_forward(tape: Tape, mask: Node, raws: dict[str, Node],
                  flags: StageFlags, pixel_size_nm: float,
                  lambda_nm: float = fd.EUV_WAVELENGTH_NM) -> Node:
    """Differentiable twin of forward(); same arithmetic, tape primitives.

    The absorption stage multiplies by the original mask node, so the mask
    receives gradient along two paths (its direct contribution and the
    attenuation it causes).
    """
    out = mask
    if flags.diffraction:
        d = tape.scale(tape.sigmoid(raws["raw_diffraction"]), 0.5)
        kernel = _cached_diffraction_weights(pixel_size_nm, lambda_nm)
        out = tape.add(out, tape.mul(d, tape.conv2d(out, kernel)))
    if flags.absorption:
        a = tape.scale(tape.sigmoid(raws["raw_absorption"]), 0.3)
        attn = tape.add_const(tape.scale(tape.mul(mask, a), -1.0), 1.0)
        out = tape.mul(out, attn)
    if flags.blur:
        sigma = tape.add_const(tape.scale(tape.sigmoid(raws["raw_blur"]), 3.0), 0.5)
        out = tape.gaussian_blur(out, sigma)
    if flags.phase:
        phase = tape.scale(tape.tanh(raws["raw_phase"]), 0.5)
        dx = tape.scale(phase, lambda_nm / (2.0 * math.pi * pixel_size_nm) * PHASE_DISPLACEMENT_GAIN)
        out = tape.add(tape.scale(out, 0.8), tape.scale(tape.shift_x(out, dx), 0.2))
    if flags.contrast:
        c = tape.scale(tape.sigmoid(raws["raw_contrast"]), 2.0)
        out = tape.clamp01(tape.mul(out, c))
    return out


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def write_params_json(path, params: PhysicsParams,
                      pixel_size_nm: float = fd.DEFAULT_PIXEL_SIZE_NM) -> None:
    eff = activate(params, pixel_size_nm)
    payload = {"raw": params.as_dict(), "effective": eff.as_json_dict()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_params_json(path) -> PhysicsParams:
    with open(path) as fh:
        payload = json.load(fh)
    return PhysicsParams.from_dict(payload["raw"])
