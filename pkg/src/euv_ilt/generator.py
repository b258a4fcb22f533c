"""Mask generators: direct pixel logits and a small convolutional net.

Both produce a mask in (0, 1) through a final sigmoid, so downstream
stages always see a continuously differentiable transmission map. The
pixel generator owns one logit per grid cell and is independent of its
input; the conv generator maps a target image to a mask and can therefore
amortize across pattern variants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, Tape
from .errors import ConfigError
from .field import Field2D

GENERATOR_MODES = ("pixel_direct", "mini_cnn")

WARM_CLAMP = 0.01   # warm-start logits come from the target clamped away from {0,1}
WEIGHT_INIT_SPAN = 0.05

# conv stack: (name, (c_out, c_in, kh, kw)); biases are zero-initialized.
# Channel widths are deliberately narrow: the conv generator is the
# capacity-limited baseline that the physics stages are measured against,
# and wider stacks fit every pattern to sub-0.2 nm on their own.
_MINI_SHAPES: tuple[tuple[str, tuple[int, ...]], ...] = (
    ("enc1_w", (4, 1, 9, 7)),
    ("enc1_b", (4,)),
    ("enc2_w", (8, 4, 5, 5)),
    ("enc2_b", (8,)),
    ("enc3_w", (16, 8, 3, 3)),
    ("enc3_b", (16,)),
    ("att1_w", (16, 16, 1, 1)),
    ("att1_b", (16,)),
    ("att3_w", (1, 16, 3, 3)),
    ("att3_b", (1,)),
    ("dec1_w", (8, 16, 3, 3)),
    ("dec1_b", (8,)),
    ("dec2_w", (4, 8, 3, 3)),
    ("dec2_b", (4,)),
    ("dec3_w", (1, 4, 3, 3)),
    ("dec3_b", (1,)),
)

MINI_PARAM_NAMES = tuple(name for name, _ in _MINI_SHAPES)


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p / (1.0 - p))


@dataclass
class PixelGenerator:
    """One logit per pixel; mask = sigmoid(logits)."""

    logits: np.ndarray

    def param_dict(self) -> dict[str, np.ndarray]:
        return {"logits": self.logits}

    def with_params(self, params: dict[str, np.ndarray]) -> "PixelGenerator":
        return PixelGenerator(logits=params["logits"])


@dataclass
class MiniGenerator:
    """Three-stage conv encoder, dual attention gate, conv decoder."""

    weights: dict[str, np.ndarray]

    def param_dict(self) -> dict[str, np.ndarray]:
        return dict(self.weights)

    def with_params(self, params: dict[str, np.ndarray]) -> "MiniGenerator":
        return MiniGenerator(weights=dict(params))


def init_pixel_generator(target: Field2D | np.ndarray,
                         warm_start: bool = True) -> PixelGenerator:
    """Warm start inverts the target through the sigmoid; cold start is flat 0.5."""
    values = target.values if isinstance(target, Field2D) else np.asarray(target)
    if warm_start:
        logits = _logit(np.clip(values, WARM_CLAMP, 1.0 - WARM_CLAMP))
    else:
        logits = np.zeros_like(values)
    return PixelGenerator(logits=logits)


def init_mini_generator(seed: int = 0) -> MiniGenerator:
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}
    for name, shape in _MINI_SHAPES:
        if name.endswith("_b"):
            weights[name] = np.zeros(shape)
        else:
            weights[name] = rng.uniform(-WEIGHT_INIT_SPAN, WEIGHT_INIT_SPAN, size=shape)
    return MiniGenerator(weights=weights)


def taped_pixel_mask(tape: Tape, logits: Node) -> Node:
    return tape.sigmoid(logits)


def taped_mini_mask(tape: Tape, params: dict[str, Node], target_values: np.ndarray) -> Node:
    """Forward pass of the conv generator on one target image."""
    w = params
    x = tape.leaf(target_values[None, :, :], "gen_input")
    h = tape.relu(tape.conv_ch(x, w["enc1_w"], w["enc1_b"]))
    h = tape.relu(tape.conv_ch(h, w["enc2_w"], w["enc2_b"]))
    h = tape.relu(tape.conv_ch(h, w["enc3_w"], w["enc3_b"]))
    gate_c = tape.sigmoid(tape.conv_ch(h, w["att1_w"], w["att1_b"]))   # per-channel gate
    gate_s = tape.sigmoid(tape.conv_ch(h, w["att3_w"], w["att3_b"]))   # spatial gate
    h = tape.mul(tape.mul(h, gate_c), gate_s)
    h = tape.relu(tape.conv_ch(h, w["dec1_w"], w["dec1_b"]))
    h = tape.relu(tape.conv_ch(h, w["dec2_w"], w["dec2_b"]))
    logits = tape.conv_ch(h, w["dec3_w"], w["dec3_b"])
    return tape.sigmoid(tape.reshape(logits, target_values.shape))


def taped_mask(tape: Tape, mode: str, params: dict[str, Node],
               target_values: np.ndarray) -> Node:
    if mode == "pixel_direct":
        return taped_pixel_mask(tape, params["logits"])
    if mode == "mini_cnn":
        return taped_mini_mask(tape, params, target_values)
    raise ConfigError(f"generator mode must be one of {GENERATOR_MODES}")


def make_generator(mode: str, target: Field2D | np.ndarray, seed: int = 0,
                   warm_start: bool = True) -> PixelGenerator | MiniGenerator:
    if mode == "pixel_direct":
        return init_pixel_generator(target, warm_start=warm_start)
    if mode == "mini_cnn":
        return init_mini_generator(seed)
    raise ConfigError(f"generator mode must be one of {GENERATOR_MODES}")


def generator_mode(gen: PixelGenerator | MiniGenerator) -> str:
    return "pixel_direct" if isinstance(gen, PixelGenerator) else "mini_cnn"


def mask_values(gen: PixelGenerator | MiniGenerator,
                target: Field2D | np.ndarray) -> np.ndarray:
    """Plain forward pass (throwaway tape keeps one code path)."""
    target_values = target.values if isinstance(target, Field2D) else np.asarray(target)
    tape = Tape()
    params = {name: tape.leaf(value, name) for name, value in gen.param_dict().items()}
    node = taped_mask(tape, generator_mode(gen), params, target_values)
    return node.value


def mask_field(gen: PixelGenerator | MiniGenerator, target: Field2D) -> Field2D:
    return target.with_values(mask_values(gen, target))
