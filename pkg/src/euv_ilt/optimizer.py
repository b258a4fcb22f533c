"""Dual-rate Adam and the training/ablation loops.

One optimizer instance drives two parameter groups at different rates:
generator parameters (pixel logits or conv weights) at lr_generator and
the five physics raws at lr_physics, 100x faster by default. Updates are
per sample, in dataset order, single threaded; with a fixed seed the
entire epoch record stream is bit-identical across runs.

Per-epoch metrology always scores the canonical (unjittered) template
through the currently enabled stages. When the contrast stage is off the
aerial image is not normalized, so edge extraction switches to the
half-max threshold.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import generator as gen_mod
from . import metrology, patterns, physics
from .autodiff import Tape
from .errors import ConfigError, NumericalAbort
from .field import Field2D
from .objective import LossBreakdown, LossWeights, taped_total_loss

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

LOSS_TARGET_MODES = ("canonical", "sample")

HISTORY_COLUMNS = ("epoch", "total", "recon", "edge", "reg", "epe_nm",
                   "d", "a", "blur_nm", "phase", "c")


@dataclass
class AdamState:
    m: dict[str, np.ndarray | float]
    v: dict[str, np.ndarray | float]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray | float]) -> "AdamState":
        zeros = lambda p: np.zeros_like(p) if isinstance(p, np.ndarray) else 0.0
        return cls(m={k: zeros(p) for k, p in params.items()},
                   v={k: zeros(p) for k, p in params.items()})


def adam_step(state: AdamState, params: dict, grads: dict,
              lr: dict[str, float] | float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
              eps: float = ADAM_EPS) -> dict:
    """One bias-corrected Adam update; returns new params, mutates state."""
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericalAbort("non-finite gradient", param=name)
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        step_lr = lr[name] if isinstance(lr, dict) else lr
        out[name] = p - step_lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return out


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "euv_contacts"
    generator_mode: str = "pixel_direct"
    epochs: int = 500
    dataset_size: int | None = None
    seed: int = 0
    lr_generator: float = 1e-4
    lr_physics: float = 1e-2
    loss_weights: LossWeights = field(default_factory=LossWeights)
    stage_flags: physics.StageFlags = field(default_factory=physics.StageFlags)
    grid: patterns.GridSpec = field(default_factory=patterns.GridSpec)
    warm_start: bool = True
    train_physics: bool = True
    loss_target: str = "canonical"
    init_raws: physics.PhysicsParams = field(default_factory=physics.PhysicsParams)

    def __post_init__(self) -> None:
        if self.kind not in patterns.ALL_KINDS:
            raise ConfigError(f"unknown pattern kind {self.kind!r}")
        if self.generator_mode not in gen_mod.GENERATOR_MODES:
            raise ConfigError(f"generator_mode must be one of {gen_mod.GENERATOR_MODES}")
        if self.loss_target not in LOSS_TARGET_MODES:
            raise ConfigError(f"loss_target must be one of {LOSS_TARGET_MODES}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr_generator <= 0 or self.lr_physics <= 0:
            raise ConfigError("learning rates must be positive")
        if self.dataset_size is not None and self.dataset_size < 1:
            raise ConfigError("dataset_size must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    epe_nm: float
    effective: physics.EffectiveParams


@dataclass
class TrainResult:
    config: TrainConfig
    history: list[EpochRecord]
    best_epoch: int
    best_epe_nm: float
    final_epe_nm: float
    final_gen_params: dict[str, np.ndarray]
    final_raws: dict[str, float]
    best_gen_params: dict[str, np.ndarray]
    best_raws: dict[str, float]
    canonical_target: Field2D
    final_mask: np.ndarray
    final_aerial: np.ndarray
    wall_seconds: float
    aborted: bool = False
    abort_reason: str = ""

    @property
    def final_effective(self) -> physics.EffectiveParams:
        return physics.activate(physics.PhysicsParams(**self.final_raws),
                                self.config.grid.pixel_size_nm)


def _threshold_mode(flags: physics.StageFlags) -> str:
    # blur without the clamping contrast stage can pull peaks below 0.5, so
    # the eval threshold adapts to half the dynamic range; every other flag
    # combination keeps peaks near 1 and uses the plain 0.5 level
    return "half_max" if (flags.blur and not flags.contrast) else "fixed_half"


def _eval_canonical(config: TrainConfig, gen, gen_params: dict, raws: dict,
                    canonical: Field2D) -> tuple[np.ndarray, np.ndarray, float]:
    """Plain (untaped) forward on the canonical template plus its EPE."""
    mask = gen_mod.mask_values(gen.with_params(gen_params), canonical)
    params = physics.PhysicsParams(**raws)
    aerial = physics.forward(canonical.with_values(mask), params, config.stage_flags)
    report = metrology.epe_for_kind(aerial, canonical, config.kind,
                                    threshold_mode=_threshold_mode(config.stage_flags))
    return mask, aerial.values, report.epe_nm


def train(config: TrainConfig) -> TrainResult:
    t0 = time.perf_counter()
    samples = patterns.sample_dataset(config.kind, config.dataset_size,
                                      config.seed, config.grid)
    canonical = samples[0].target
    gen = gen_mod.make_generator(config.generator_mode, canonical,
                                 seed=config.seed, warm_start=config.warm_start)
    gen_params = gen.param_dict()
    raws = physics.PhysicsParams(**config.init_raws.as_dict()).as_dict()
    gen_names = tuple(gen_params.keys())

    all_params = {**gen_params, **raws}
    state = AdamState.for_params(all_params)
    lr_map = {name: (config.lr_physics if name in physics.RAW_PARAM_NAMES
                     else config.lr_generator) for name in all_params}

    history: list[EpochRecord] = []
    best_epe = math.inf
    best_epoch = -1
    best_gen = {k: np.copy(v) for k, v in gen_params.items()}
    best_raws = dict(raws)
    aborted = False
    abort_reason = ""

    for epoch in range(config.epochs):
        sums = np.zeros(4)
        try:
            for sample in samples:
                tape = Tape()
                pn = {k: tape.leaf(gen_params[k], k) for k in gen_names}
                rn = {k: tape.leaf(raws[k], k) for k in physics.RAW_PARAM_NAMES}
                mask = gen_mod.taped_mask(tape, config.generator_mode, pn,
                                          sample.target.values)
                aerial = physics.taped_forward(tape, mask, rn, config.stage_flags,
                                               pixel_size_nm=config.grid.pixel_size_nm)
                loss_target = (canonical.values if config.loss_target == "canonical"
                               else sample.target.values)
                tl = taped_total_loss(tape, aerial, loss_target, rn,
                                      config.loss_weights)
                if not np.isfinite(tl.total.value):
                    raise NumericalAbort("non-finite loss", param="total")
                tape.backward(tl.total)
                params = {**{k: gen_params[k] for k in gen_names}, **raws}
                grads = {k: pn[k].grad for k in gen_names}
                if config.train_physics:
                    grads.update({k: rn[k].grad for k in physics.RAW_PARAM_NAMES})
                else:
                    params = {k: params[k] for k in gen_names}
                updated = adam_step(state, params, grads, lr_map)
                for k in gen_names:
                    gen_params[k] = updated[k]
                if config.train_physics:
                    for k in physics.RAW_PARAM_NAMES:
                        raws[k] = float(updated[k])
                b = tl.breakdown()
                sums += (b.total, b.recon, b.edge, b.physics_reg)
        except NumericalAbort as exc:
            aborted = True
            abort_reason = f"{exc} (param={exc.param}, epoch={epoch})"
            break
        means = sums / len(samples)
        losses = LossBreakdown(recon=means[1], edge=means[2],
                               physics_reg=means[3], total=means[0])
        _, _, epe_nm = _eval_canonical(config, gen, gen_params, raws, canonical)
        effective = physics.activate(physics.PhysicsParams(**raws),
                                     config.grid.pixel_size_nm)
        history.append(EpochRecord(epoch=epoch, losses=losses, epe_nm=epe_nm,
                                   effective=effective))
        if epe_nm < best_epe:
            best_epe = epe_nm
            best_epoch = epoch
            best_gen = {k: np.copy(v) for k, v in gen_params.items()}
            best_raws = dict(raws)

    final_mask, final_aerial, final_epe = _eval_canonical(
        config, gen, gen_params, raws, canonical)
    if not history:
        best_epe = final_epe
        best_epoch = 0
        best_gen = {k: np.copy(v) for k, v in gen_params.items()}
        best_raws = dict(raws)
    return TrainResult(
        config=config, history=history,
        best_epoch=best_epoch, best_epe_nm=best_epe, final_epe_nm=final_epe,
        final_gen_params=gen_params, final_raws=raws,
        best_gen_params=best_gen, best_raws=best_raws,
        canonical_target=canonical,
        final_mask=final_mask, final_aerial=final_aerial,
        wall_seconds=time.perf_counter() - t0,
        aborted=aborted, abort_reason=abort_reason,
    )


def write_history_csv(path: str, history: list[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            e = rec.effective
            writer.writerow([
                rec.epoch,
                repr(rec.losses.total), repr(rec.losses.recon),
                repr(rec.losses.edge), repr(rec.losses.physics_reg),
                repr(rec.epe_nm),
                repr(e.diffraction), repr(e.absorption), repr(e.blur_nm),
                repr(e.phase_rad), repr(e.contrast),
            ])


# ---------------------------------------------------------------------------
# physics ablation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationRow:
    stage: str
    epe_nm: float
    improvement_pct_vs_no_physics: float
    effective: physics.EffectiveParams


@dataclass
class AblationResult:
    kind: str
    rows: list[AblationRow]
    wall_seconds: float
    final_aerials: list[np.ndarray] = field(default_factory=list)
    canonical_target: Field2D | None = None


# raw_blur giving sigma_b = 0.9 px (5.7 nm), the scale full-length training
# settles near on array patterns; midpoint 2.0 px washes out sub-8px pitches
ABLATION_BLUR_RAW = -1.8718021769015916


def ablation_config(kind: str, seed: int = 0, epochs: int = 400,
                    dataset_size: int = 8, grid_px: int = 64) -> TrainConfig:
    """Frozen-physics protocol used for stage attribution.

    Every row shares one reference imaging model (midpoint raws except
    blur at 0.9 px) and trains a per-pixel mask through its own stage
    subset only; `ablate` then scores each row's mask under the full
    reference model. A row's EPE therefore measures how well a mask
    designed with partial knowledge of the optics survives the real
    system, so rows whose subset omits the dominant distortion cannot
    pre-compensate for it and stay near the uncompensated baseline.
    Physics raws are frozen: letting them train would move each row to a
    different operating point and the rows would no longer be comparable.
    The generator rate is raised above the train default because the
    blur-aware rows optimize through a smoothing kernel that dilutes
    pixel gradients.
    """
    grid = patterns.GridSpec(grid_px, grid_px, patterns.GridSpec().pixel_size_nm)
    return TrainConfig(kind=kind, generator_mode="pixel_direct", epochs=epochs,
                       dataset_size=dataset_size, seed=seed, grid=grid,
                       lr_generator=3e-3, loss_target="canonical",
                       train_physics=False,
                       init_raws=physics.PhysicsParams(raw_blur=ABLATION_BLUR_RAW))


def ablate(config: TrainConfig,
           stages: tuple[tuple[str, physics.StageFlags], ...] = physics.ABLATION_STAGES,
           ) -> AblationResult:
    """Train one mask per stage subset, then score all under full physics.

    The common reference model is the full five-stage forward at the
    config's init raws, which ablation_config freezes for every row.
    """
    t0 = time.perf_counter()
    rows: list[AblationRow] = []
    aerials: list[np.ndarray] = []
    canonical = None
    base_epe = None
    for label, flags in stages:
        res = train(replace(config, stage_flags=flags))
        canonical = res.canonical_target
        reference = physics.forward(canonical.with_values(res.final_mask),
                                    config.init_raws, physics.StageFlags.all())
        epe_nm = metrology.epe_for_kind(reference, canonical, config.kind).epe_nm
        if base_epe is None:
            base_epe = epe_nm
        imp = 0.0 if base_epe == 0 else (base_epe - epe_nm) / base_epe * 100.0
        rows.append(AblationRow(stage=label, epe_nm=epe_nm,
                                improvement_pct_vs_no_physics=imp,
                                effective=res.final_effective))
        aerials.append(res.final_aerial)
    return AblationResult(kind=config.kind, rows=rows,
                          wall_seconds=time.perf_counter() - t0,
                          final_aerials=aerials, canonical_target=canonical)


def write_ablation_csv(path: str, result: AblationResult) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stage", "epe_nm", "improvement_pct_vs_no_physics"])
        for row in result.rows:
            writer.writerow([row.stage, repr(row.epe_nm),
                             repr(row.improvement_pct_vs_no_physics)])
