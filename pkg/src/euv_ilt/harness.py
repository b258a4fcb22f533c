"""Run directories, artifact emission, and figure rendering.

Every command writes into a self-describing run directory: the fully
resolved config goes in first (so the run can be reproduced from the
directory alone), artifacts accumulate next, and a manifest listing every
emitted file lands last via an atomic rename. Metric CSVs are the ground
truth; images are conveniences for eyeballing runs.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import time
from dataclasses import asdict

import numpy as np

from . import __version__, metrology, optimizer, patterns, physics
from . import field as fd
from .errors import ConfigError, LithoError
from .objective import LossWeights

HISTOGRAM_BINS = 64
EPE_REFERENCE_LINES_NM = (1.0, 4.5)


# ---------------------------------------------------------------------------
# config (de)serialization
# ---------------------------------------------------------------------------


def train_config_to_dict(cfg: optimizer.TrainConfig) -> dict:
    return {
        "kind": cfg.kind,
        "generator_mode": cfg.generator_mode,
        "epochs": cfg.epochs,
        "dataset_size": cfg.dataset_size,
        "seed": cfg.seed,
        "lr_generator": cfg.lr_generator,
        "lr_physics": cfg.lr_physics,
        "loss_weights": asdict(cfg.loss_weights),
        "stage_flags": asdict(cfg.stage_flags),
        "grid": asdict(cfg.grid),
        "warm_start": cfg.warm_start,
        "train_physics": cfg.train_physics,
        "loss_target": cfg.loss_target,
        "init_raws": cfg.init_raws.as_dict(),
    }


def train_config_from_dict(data: dict) -> optimizer.TrainConfig:
    known = {f.name for f in dataclasses.fields(optimizer.TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(data)
    if "loss_weights" in kwargs:
        kwargs["loss_weights"] = LossWeights(**kwargs["loss_weights"])
    if "stage_flags" in kwargs:
        kwargs["stage_flags"] = physics.StageFlags(**kwargs["stage_flags"])
    if "grid" in kwargs:
        kwargs["grid"] = patterns.GridSpec(**kwargs["grid"])
    if "init_raws" in kwargs:
        kwargs["init_raws"] = physics.PhysicsParams.from_dict(kwargs["init_raws"])
    try:
        return optimizer.TrainConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_json_atomic(path: str, payload: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# run directory bookkeeping
# ---------------------------------------------------------------------------


class RunContext:
    """Tracks emitted files and writes the closing manifest atomically."""

    def __init__(self, out_dir: str, command: str, config_payload: dict, seed: int):
        self.out_dir = out_dir
        self.command = command
        self.config_payload = config_payload
        self.seed = seed
        self.started_at = time.time()
        self.files: list[str] = []
        os.makedirs(out_dir, exist_ok=True)
        self.emit_json("config.json", config_payload)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def register(self, name: str) -> str:
        if name not in self.files:
            self.files.append(name)
        return self.path(name)

    def emit_json(self, name: str, payload: dict) -> None:
        write_json_atomic(self.register(name), payload)

    def finish(self, extra: dict | None = None) -> None:
        manifest = {
            "tool_version": __version__,
            "command": self.command,
            "config_hash": config_hash(self.config_payload),
            "seed": self.seed,
            "started_at": self.started_at,
            "finished_at": time.time(),
            "files": sorted(self.files),
        }
        if extra:
            manifest.update(extra)
        write_json_atomic(self.path("manifest.json"), manifest)


def _write_pgm(ctx: RunContext, name: str, values: np.ndarray,
               pixel_size_nm: float) -> None:
    h, w = values.shape
    f = fd.Field2D(w, h, pixel_size_nm, np.asarray(values, dtype=np.float64))
    fd.write_pgm(f, ctx.register(name))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def run_generate_patterns(out_dir: str, kinds: tuple[str, ...] | None = None,
                          grid: patterns.GridSpec = patterns.GridSpec()) -> RunContext:
    kinds = tuple(kinds) if kinds else patterns.ALL_KINDS
    for kind in kinds:
        patterns.catalog_entry(kind)  # validates early
    payload = {"kinds": list(kinds), "grid": asdict(grid)}
    ctx = RunContext(out_dir, "generate-patterns", payload, seed=0)
    for kind in kinds:
        spec = patterns.canonical_spec(kind, grid)
        rendered = patterns.render(spec)
        st = patterns.stats(rendered, patterns.quantization_warnings(spec))
        entry = patterns.catalog_entry(kind)
        _write_pgm(ctx, f"{kind}.pgm", rendered.values, grid.pixel_size_nm)
        ctx.emit_json(f"{kind}_stats.json", {
            "kind": kind,
            "fill_ratio": st.fill_ratio,
            "min_feature_nm": st.min_feature_nm,
            "warnings": list(st.warnings),
            "expected_fill_pct": entry.expected_fill_pct,
            "expected_min_feature_nm": entry.expected_min_feature_nm,
            "pitch_nm": spec.pitch_nm,
            "width_nm": spec.width_nm,
        })
    with open(ctx.register("catalog.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "category", "expected_fill_pct",
                         "expected_min_feature_nm", "expected_success_band",
                         "pitch_nm", "width_nm", "density", "seed"])
        for kind in kinds:
            e = patterns.catalog_entry(kind)
            writer.writerow([e.kind, e.category, repr(e.expected_fill_pct),
                             repr(e.expected_min_feature_nm), e.expected_success_band,
                             repr(e.pitch_nm), repr(e.width_nm), repr(e.density), e.seed])
    ctx.finish()
    return ctx


def _train_summary(result: optimizer.TrainResult) -> dict:
    first_epe = result.history[0].epe_nm if result.history else result.final_epe_nm
    improvement = 0.0 if first_epe == 0 else (
        (first_epe - result.final_epe_nm) / first_epe * 100.0)
    return {
        "kind": result.config.kind,
        "final_epe_nm": result.final_epe_nm,
        "best_epe_nm": result.best_epe_nm,
        "best_epoch": result.best_epoch,
        "improvement_pct": improvement,
        "wall_seconds": result.wall_seconds,
        "seconds_per_epoch": (result.wall_seconds / len(result.history)
                              if result.history else result.wall_seconds),
        "aborted": result.aborted,
        "abort_reason": result.abort_reason,
    }


def run_train(cfg: optimizer.TrainConfig, out_dir: str) -> tuple[RunContext, optimizer.TrainResult]:
    ctx = RunContext(out_dir, "train", train_config_to_dict(cfg), seed=cfg.seed)
    result = optimizer.train(cfg)
    optimizer.write_history_csv(ctx.register("history.csv"), result.history)
    ps = cfg.grid.pixel_size_nm
    physics.write_params_json(ctx.register("params.json"),
                              physics.PhysicsParams(**result.final_raws), ps)
    physics.write_params_json(ctx.register("params_best.json"),
                              physics.PhysicsParams(**result.best_raws), ps)
    target = result.canonical_target.values
    _write_pgm(ctx, "target.pgm", target, ps)
    _write_pgm(ctx, "mask_final.pgm", result.final_mask, ps)
    _write_pgm(ctx, "aerial_final.pgm", result.final_aerial, ps)
    _write_pgm(ctx, "diff.pgm", np.abs(result.final_aerial - target), ps)
    summary = _train_summary(result)
    ctx.emit_json("summary.json", summary)
    ctx.finish(extra={"wall_seconds": result.wall_seconds,
                      "seconds_per_epoch": summary["seconds_per_epoch"]})
    return ctx, result


def run_ablate(cfg: optimizer.TrainConfig, out_dir: str) -> tuple[RunContext, optimizer.AblationResult]:
    ctx = RunContext(out_dir, "ablate", train_config_to_dict(cfg), seed=cfg.seed)
    result = optimizer.ablate(cfg)
    optimizer.write_ablation_csv(ctx.register("ablation.csv"), result)
    ps = cfg.grid.pixel_size_nm
    for row, aerial in zip(result.rows, result.final_aerials):
        _write_pgm(ctx, f"aerial_{row.stage.replace('+', 'plus_')}.pgm", aerial, ps)
    if result.canonical_target is not None:
        _write_pgm(ctx, "target.pgm", result.canonical_target.values, ps)
    ctx.finish(extra={"wall_seconds": result.wall_seconds})
    return ctx, result


SWEEP_COLUMNS = ("kind", "final_epe_nm", "best_epe_nm", "improvement_pct",
                 "d", "a", "blur_nm", "phase_rad", "c")


def run_sweep(base_cfg: optimizer.TrainConfig, kinds: tuple[str, ...],
              out_dir: str) -> tuple[RunContext, list[dict]]:
    if not kinds:
        raise ConfigError("sweep requires at least one pattern kind")
    for kind in kinds:
        patterns.catalog_entry(kind)
    payload = {"kinds": list(kinds), "base": train_config_to_dict(base_cfg)}
    ctx = RunContext(out_dir, "sweep", payload, seed=base_cfg.seed)
    rows: list[dict] = []
    failures: list[dict] = []
    for kind in kinds:
        cfg = dataclasses.replace(base_cfg, kind=kind)
        sub_dir = os.path.join(out_dir, kind)
        try:
            sub_ctx, result = run_train(cfg, sub_dir)
        except LithoError as exc:
            failures.append({"kind": kind, "error": str(exc)})
            continue
        for name in sub_ctx.files:
            ctx.register(os.path.join(kind, name))
        if result.aborted:
            failures.append({"kind": kind, "error": result.abort_reason})
            continue
        summary = _train_summary(result)
        eff = result.final_effective
        rows.append({
            "kind": kind,
            "final_epe_nm": result.final_epe_nm,
            "best_epe_nm": result.best_epe_nm,
            "improvement_pct": summary["improvement_pct"],
            "d": eff.diffraction, "a": eff.absorption, "blur_nm": eff.blur_nm,
            "phase_rad": eff.phase_rad, "c": eff.contrast,
        })
    rows.sort(key=lambda r: r["kind"])
    with open(ctx.register("summary.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([row["kind"]] + [repr(row[c]) for c in SWEEP_COLUMNS[1:]])
    _render_sweep_chart(ctx, rows)
    ctx.finish(extra={"failures": failures})
    return ctx, rows


def _render_sweep_chart(ctx: RunContext, rows: list[dict]) -> None:
    if not rows:
        return
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kinds = [r["kind"] for r in rows]
    finals = [r["final_epe_nm"] for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, len(rows) * 0.8), 4))
    ax.bar(range(len(rows)), finals, color="#4878d0")
    for ref in EPE_REFERENCE_LINES_NM:
        ax.axhline(ref, linestyle="--", linewidth=1,
                   color="#d65f5f" if ref > 1 else "#6acc64",
                   label=f"{ref} nm")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(kinds, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("final EPE (nm)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(ctx.register("sweep_epe.png"), dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# render (presentation only; no metric recomputation)
# ---------------------------------------------------------------------------


def _read_history(path: str) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


def run_render(run_dir: str) -> RunContext:
    needed = ("target.pgm", "mask_final.pgm", "aerial_final.pgm", "diff.pgm",
              "params.json", "history.csv", "summary.json")
    for name in needed:
        if not os.path.exists(os.path.join(run_dir, name)):
            raise FileNotFoundError(f"run directory missing {name}")
    payload = {"run_dir": os.path.abspath(run_dir)}
    ctx = RunContext(os.path.join(run_dir, "render"), "render", payload, seed=0)

    target = fd.read_pgm(os.path.join(run_dir, "target.pgm"))
    mask = fd.read_pgm(os.path.join(run_dir, "mask_final.pgm"))
    aerial = fd.read_pgm(os.path.join(run_dir, "aerial_final.pgm"))
    diff = fd.read_pgm(os.path.join(run_dir, "diff.pgm"))
    with open(os.path.join(run_dir, "params.json"), encoding="utf-8") as fh:
        params = json.load(fh)
    with open(os.path.join(run_dir, "summary.json"), encoding="utf-8") as fh:
        summary = json.load(fh)
    history = _read_history(os.path.join(run_dir, "history.csv"))

    # cross-section through the middle row: one CSV row per x position
    mid = target.height // 2
    with open(ctx.register("cross_section.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x_px", "target", "mask", "aerial"])
        for x in range(target.width):
            writer.writerow([x, repr(target.values[mid, x]),
                             repr(mask.values[mid, x]), repr(aerial.values[mid, x])])

    effective = params["effective"]
    theta_rows = [("d", effective["diffraction"]), ("a", effective["absorption"]),
                  ("blur_nm", effective["blur_nm"]), ("phase_rad", effective["phase_rad"]),
                  ("c", effective["contrast"])]
    with open(ctx.register("theta_bars.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["param", "value"])
        for name, value in theta_rows:
            writer.writerow([name, repr(float(value))])

    with open(ctx.register("epe_comparison.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "epe_nm"])
        writer.writerow(["final", repr(float(summary["final_epe_nm"]))])
        writer.writerow(["best", repr(float(summary["best_epe_nm"]))])
        writer.writerow(["target_line", repr(EPE_REFERENCE_LINES_NM[0])])
        writer.writerow(["baseline_line", repr(EPE_REFERENCE_LINES_NM[1])])

    edges = np.linspace(0.0, 1.0, HISTOGRAM_BINS + 1)
    mask_counts, _ = np.histogram(mask.values, bins=edges)
    aerial_counts, _ = np.histogram(np.clip(aerial.values, 0, 1), bins=edges)
    with open(ctx.register("histograms.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "mask_count", "aerial_count"])
        for i in range(HISTOGRAM_BINS):
            writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])),
                             int(mask_counts[i]), int(aerial_counts[i])])

    _render_panel(ctx, target, mask, aerial, diff, theta_rows, summary, history, mid)
    ctx.finish()
    return ctx


def _render_panel(ctx, target, mask, aerial, diff, theta_rows, summary,
                  history, mid) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 4, figsize=(16, 8))
    for ax, (title, f) in zip(axes[0], [("target", target), ("mask", mask),
                                        ("aerial", aerial), ("|aerial - target|", diff)]):
        im = ax.imshow(f.values, cmap="magma", vmin=0.0,
                       vmax=max(1.0, float(f.values.max())))
        ax.set_title(title, fontsize=10)
        ax.axis("off")
        fig.colorbar(im, ax=ax, fraction=0.046)

    xs = np.arange(target.width)
    ax = axes[1][0]
    ax.plot(xs, target.values[mid], label="target", linewidth=1)
    ax.plot(xs, mask.values[mid], label="mask", linewidth=1)
    ax.plot(xs, aerial.values[mid], label="aerial", linewidth=1)
    ax.set_title(f"cross-section y={mid}", fontsize=10)
    ax.legend(fontsize=7)

    ax = axes[1][1]
    names = [n for n, _ in theta_rows]
    values = [v for _, v in theta_rows]
    ax.bar(names, values, color="#4878d0")
    ax.set_title("effective parameters", fontsize=10)
    ax.tick_params(axis="x", labelsize=7)

    ax = axes[1][2]
    labels = ["final", "best"] + [f"{r} nm line" for r in EPE_REFERENCE_LINES_NM]
    epe_vals = [summary["final_epe_nm"], summary["best_epe_nm"], *EPE_REFERENCE_LINES_NM]
    ax.bar(labels, epe_vals, color=["#4878d0", "#6acc64", "#d5bb67", "#d65f5f"])
    ax.set_title("EPE comparison (nm)", fontsize=10)
    ax.tick_params(axis="x", labelsize=7, rotation=20)

    ax = axes[1][3]
    if history:
        epochs = [int(r["epoch"]) for r in history]
        ax.plot(epochs, [float(r["epe_nm"]) for r in history], linewidth=1)
        ax.set_title("EPE progression (nm)", fontsize=10)
        ax.set_xlabel("epoch", fontsize=8)
    fig.tight_layout()
    fig.savefig(ctx.register("panel.png"), dpi=120)
    plt.close(fig)
