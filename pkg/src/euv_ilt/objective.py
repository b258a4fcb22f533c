"""Training objective: weighted reconstruction + edge fidelity + raw-theta pull.

    total = alpha * recon + beta * edge + gamma * physics_reg

with alpha=0.7, beta=0.25, gamma=0.05. recon is plain MSE. The default edge
term compares scalar mean-gradient magnitudes |g(I) - g(T)|; the alternative
("grad_diff") takes the mean |forward-difference| of the difference image.
physics_reg is 0.01 * sum|raw|; the 0.01 composes with gamma, so the raw
magnitudes feel an effective 5e-4 pull. The total is always evaluated in the
same floating-point order (alpha-term + beta-term + gamma-term, left to
right), so repeated evaluations are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import field as fd
from .autodiff import Node, Tape
from .errors import ConfigError
from .physics import RAW_PARAM_NAMES, PhysicsParams

EDGE_LOSS_MODES = ("mag_diff", "grad_diff")
PHYSICS_REG_SCALE = 0.01


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.7   # reconstruction
    beta: float = 0.25   # edge fidelity
    gamma: float = 0.05  # physics regularization
    edge_loss_mode: str = "mag_diff"

    def __post_init__(self):
        if self.edge_loss_mode not in EDGE_LOSS_MODES:
            raise ConfigError(f"edge_loss_mode must be one of {EDGE_LOSS_MODES}")


@dataclass
class LossBreakdown:
    recon: float
    edge: float
    physics_reg: float
    total: float


def recon_loss(pred: fd.Field2D, target: fd.Field2D) -> float:
    """Mean squared error over all pixels."""
    diff = pred.values - target.values
    return float(np.mean(diff * diff))


def edge_loss(pred: fd.Field2D, target: fd.Field2D, mode: str = "mag_diff") -> float:
    if mode == "mag_diff":
        return abs(fd.gradient_l1(pred) - fd.gradient_l1(target))
    if mode == "grad_diff":
        return fd.gradient_l1_values(pred.values - target.values)
    raise ConfigError(f"unknown edge loss mode {mode!r}")


def physics_reg(params: PhysicsParams) -> float:
    """0.01 * sum of |raw| over the five physics learnables."""
    raws = params.as_dict()
    return PHYSICS_REG_SCALE * (
        abs(raws["raw_diffraction"]) + abs(raws["raw_absorption"]) + abs(raws["raw_blur"])
        + abs(raws["raw_phase"]) + abs(raws["raw_contrast"])
    )


def total_loss(pred: fd.Field2D, target: fd.Field2D, params: PhysicsParams,
               weights: LossWeights = LossWeights()) -> LossBreakdown:
    r = recon_loss(pred, target)
    e = edge_loss(pred, target, weights.edge_loss_mode)
    p = physics_reg(params)
    return LossBreakdown(r, e, p, compose_total(r, e, p, weights))


def compose_total(recon: float, edge: float, reg: float,
                  weights: LossWeights = LossWeights()) -> float:
    # fixed floating order: alpha-term, then beta-term, then gamma-term
    return weights.alpha * recon + weights.beta * edge + weights.gamma * reg


# ---------------------------------------------------------------------------
# taped version for training
# ---------------------------------------------------------------------------


@dataclass
class TapedLoss:
    total: Node
    recon: Node
    edge: Node
    physics_reg: Node

    def breakdown(self) -> LossBreakdown:
        return LossBreakdown(
            recon=float(self.recon.value),
            edge=float(self.edge.value),
            physics_reg=float(self.physics_reg.value),
            total=float(self.total.value),
        )


def taped_total_loss(tape: Tape, aerial: Node, target_values: np.ndarray,
                     raws: dict[str, Node],
                     weights: LossWeights = LossWeights()) -> TapedLoss:
    """Differentiable twin of total_loss against a constant target."""
    target = np.asarray(target_values, dtype=np.float64)
    diff = tape.sub(aerial, tape.leaf(target, "target"))
    recon = tape.mean(tape.mul(diff, diff))
    if weights.edge_loss_mode == "mag_diff":
        target_g = fd.gradient_l1_values(target)
        edge = tape.absval(tape.add_const(tape.gradient_l1(aerial), -target_g))
    else:
        edge = tape.gradient_l1(diff)
    reg_sum = None
    for name in RAW_PARAM_NAMES:
        term = tape.absval(raws[name])
        reg_sum = term if reg_sum is None else tape.add(reg_sum, term)
    reg = tape.scale(reg_sum, PHYSICS_REG_SCALE)
    total = tape.add(
        tape.add(tape.scale(recon, weights.alpha), tape.scale(edge, weights.beta)),
        tape.scale(reg, weights.gamma),
    )
    return TapedLoss(total=total, recon=recon, edge=edge, physics_reg=reg)
