"""Deterministic raster generators for the 18-kind pattern catalog.

Every kind renders as a parametric composition of rectangles (or strokes)
on a uniform grid, driven by (pitch_nm, width_nm) with kind-specific
canonical defaults. Rendering is pure: the same spec always yields the
same binary field, byte for byte. Real-valued pitches accumulate in nm and
quantize per period, so long-range spacing stays faithful even when a
single period is not an integer pixel count. Features that would be
clipped by the field boundary are omitted entirely, never truncated.

Catalog statistics (fill ratio, minimum 1-run feature) are the contract;
visual identity with any particular published layout is not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import field as fd
from .errors import ContractError, GeometryError

# global sampling ranges for jittered dataset variants (nm)
PITCH_RANGE_NM = (20.0, 100.0)
WIDTH_RANGE_NM = (8.0, 50.0)
JITTER_FRACTION = 0.10          # window half-width around canonical dims
MAX_TRANSLATION_PX = 2          # integer jitter, always below one pitch
DATASET_SIZE_RANGE = (48, 52)


@dataclass(frozen=True)
class GridSpec:
    width_px: int = fd.DEFAULT_GRID_PX
    height_px: int = fd.DEFAULT_GRID_PX
    pixel_size_nm: float = fd.DEFAULT_PIXEL_SIZE_NM


@dataclass(frozen=True)
class PatternSpec:
    kind: str
    pitch_nm: float
    width_nm: float
    density: float = 0.0
    seed: int = 0
    tx_px: int = 0
    ty_px: int = 0
    grid: GridSpec = field(default_factory=GridSpec)

    @property
    def aspect_ratio(self) -> float:
        return self.pitch_nm / self.width_nm


@dataclass(frozen=True)
class PatternStats:
    fill_ratio: float
    min_feature_nm: float
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class CatalogEntry:
    kind: str
    category: str
    expected_fill_pct: float
    expected_min_feature_nm: float
    expected_success_band: str

    # canonical template dimensions
    pitch_nm: float = 0.0
    width_nm: float = 0.0
    density: float = 0.0
    seed: int = 0


_BAND = {"Easy": "70-90%", "Moderate": "40-70%", "Hard": "10-40%",
         "Advanced": "40-70%", "Extreme": "10-40%"}

# kind, category, expected fill %, expected min feature nm, canonical dims
_CATALOG_ROWS = (
    ("logic_gates", "Easy", 9.9, 31.6, 88.6, 31.64, 0.0, 0),
    ("euv_line_space", "Moderate", 58.6, 19.0, 32.0, 16.0, 0.0, 0),
    ("euv_contacts", "Easy", 56.2, 38.0, 50.0, 40.0, 0.0, 0),
    ("euv_metal", "Moderate", 68.1, 19.0, 42.0, 24.0, 0.0, 0),
    ("sti_pattern", "Easy", 74.2, 120.2, 158.2, 120.2, 0.0, 0),
    ("finfet_3nm", "Moderate", 52.3, 12.7, 24.0, 12.0, 0.0, 0),
    ("dram_arrays", "Easy", 71.8, 31.6, 38.0, 30.0, 0.0, 0),
    ("sram_cells", "Moderate", 52.4, 12.7, 75.9, 12.66, 0.0, 0),
    ("contact_cuts", "Easy", 27.3, 50.6, 82.3, 50.6, 0.7, 3),
    ("high_na_lines", "Moderate", 50.0, 12.7, 25.3, 12.0, 0.0, 0),
    ("high_na_contacts", "Easy", 43.1, 25.3, 38.0, 28.0, 0.0, 0),
    ("curvilinear", "Hard", 8.7, 6.3, 405.0, 6.3, 0.0, 0),
    ("gaafet_nanosheets", "Advanced", 35.5, 12.0, 25.3, 12.0, 0.0, 0),
    ("mbcfet", "Advanced", 42.1, 8.0, 50.0, 8.0, 0.0, 0),
    ("backside_power", "Advanced", 65.3, 15.0, 31.6, 20.0, 0.0, 0),
    ("cfet", "Extreme", 28.7, 8.0, 50.0, 8.0, 0.0, 0),
    ("high_na_sub8", "Extreme", 45.2, 6.0, 12.7, 6.0, 0.0, 0),
    ("strain_engineering", "Advanced", 55.8, 25.0, 44.3, 25.0, 0.0, 0),
)

ALL_KINDS = tuple(row[0] for row in _CATALOG_ROWS)
STANDARD_KINDS = ALL_KINDS[:12]
ADVANCED_KINDS = ALL_KINDS[12:]
EASY_KINDS = tuple(r[0] for r in _CATALOG_ROWS if r[1] == "Easy")

_CATALOG = {
    row[0]: CatalogEntry(
        kind=row[0], category=row[1], expected_fill_pct=row[2],
        expected_min_feature_nm=row[3], expected_success_band=_BAND[row[1]],
        pitch_nm=row[4], width_nm=row[5], density=row[6], seed=row[7],
    )
    for row in _CATALOG_ROWS
}


def catalog() -> list[CatalogEntry]:
    return [_CATALOG[k] for k in ALL_KINDS]


def catalog_entry(kind: str) -> CatalogEntry:
    if kind not in _CATALOG:
        raise GeometryError(f"unknown pattern kind {kind!r}")
    return _CATALOG[kind]


def canonical_spec(kind: str, grid: GridSpec = GridSpec()) -> PatternSpec:
    e = catalog_entry(kind)
    return PatternSpec(kind=kind, pitch_nm=e.pitch_nm, width_nm=e.width_nm,
                       density=e.density, seed=e.seed, grid=grid)


def legacy_line_space_spec(grid: GridSpec = GridSpec()) -> PatternSpec:
    """Coarse line-space preset (101.25 nm lines on a 516.75 nm pitch)."""
    return PatternSpec(kind="euv_line_space", pitch_nm=516.75, width_nm=101.25, grid=grid)


# ---------------------------------------------------------------------------
# raster helpers
# ---------------------------------------------------------------------------


def _feature_px(nm: float, ps: float) -> int:
    return max(1, int(round(nm / ps)))


def _period_starts(pitch_px: float, feature_px: int, limit_px: int) -> list[int]:
    """Complete-feature period starts: nm-accumulated, quantized per period."""
    if pitch_px < 1.0:
        raise GeometryError(f"pitch below one pixel: {pitch_px}")
    starts = []
    k = 0
    while True:
        s = int(round(k * pitch_px))
        if s + feature_px > limit_px:
            break
        starts.append(s)
        k += 1
    return starts


def _rect(arr: np.ndarray, r0: int, c0: int, h: int, w: int) -> None:
    arr[max(r0, 0):r0 + h, max(c0, 0):c0 + w] = True


# ---------------------------------------------------------------------------
# renderers (one per kind)
# ---------------------------------------------------------------------------


def _render_logic_gates(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # H-shaped interconnects: two tall bars, a crossbar, and landing pads
    arr = np.zeros((H, W), dtype=bool)
    bar_w = _feature_px(spec.width_nm, ps)
    gap = _feature_px(spec.pitch_nm, ps)
    bar_h = min(H // 2 - 1, int(round(400.0 / ps)))
    pad = bar_w
    for cx in (W // 4, (3 * W) // 4):
        left = cx - gap // 2 - bar_w
        right = cx + gap - gap // 2
        top = (H - bar_h) // 2
        _rect(arr, top, left, bar_h, bar_w)
        _rect(arr, top, right, bar_h, bar_w)
        _rect(arr, top + (bar_h - bar_w) // 2, left + bar_w, bar_w, gap - gap // 2 + gap // 2)
        # pads stick outward from the bar tips
        _rect(arr, top, left - pad, pad, pad)
        _rect(arr, top + bar_h - pad, left - pad, pad, pad)
        _rect(arr, top, right + bar_w, pad, pad)
        _rect(arr, top + bar_h - pad, right + bar_w, pad, pad)
    return arr


def _render_line_space(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    arr = np.zeros((H, W), dtype=bool)
    line = _feature_px(spec.width_nm, ps)
    for s in _period_starts(spec.pitch_nm / ps, line, W):
        arr[:, s:s + line] = True
    return arr


def _render_contacts(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    arr = np.zeros((H, W), dtype=bool)
    side = _feature_px(spec.width_nm, ps)
    xs = _period_starts(spec.pitch_nm / ps, side, W)
    ys = _period_starts(spec.pitch_nm / ps, side, H)
    for y in ys:
        for x in xs:
            _rect(arr, y, x, side, side)
    return arr


def _render_euv_metal(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # routing lines plus periodic redundancy straps
    arr = np.zeros((H, W), dtype=bool)
    line = _feature_px(spec.width_nm, ps)
    for s in _period_starts(spec.pitch_nm / ps, line, W):
        arr[:, s:s + line] = True
    strap_h = max(1, line - 1)
    for r in _period_starts(16.0, strap_h, H):
        arr[r:r + strap_h, :] = True
    return arr


def _render_sti(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # wide active stripes separated by narrow isolation trenches
    arr = np.zeros((H, W), dtype=bool)
    active = _feature_px(spec.width_nm, ps)
    for s in _period_starts(spec.pitch_nm / ps, active, W):
        arr[:, s:s + active] = True
    return arr


def _render_dram(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # storage cell array; cells keep the canonical 3:5 width:height ratio
    arr = np.zeros((H, W), dtype=bool)
    cell_w = _feature_px(spec.width_nm, ps)
    cell_h = _feature_px(spec.width_nm * 5.0 / 3.0, ps)
    xp = spec.pitch_nm / ps
    yp = xp * 1.5
    for y in _period_starts(yp, cell_h, H):
        for x in _period_starts(xp, cell_w, W):
            _rect(arr, y, x, cell_h, cell_w)
    return arr


def _render_sram(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # 6T-style unit cell tiled on a square grid
    arr = np.zeros((H, W), dtype=bool)
    tile = _feature_px(spec.pitch_nm, ps)
    line = _feature_px(spec.width_nm, ps)
    wl_h = line + 1
    for ty in _period_starts(float(tile), tile, H):
        for tx in _period_starts(float(tile), tile, W):
            _rect(arr, ty, tx, wl_h, tile)                      # wordline bar
            _rect(arr, ty + wl_h, tx + tile // 4 - line // 2, tile - wl_h, line)
            _rect(arr, ty + wl_h, tx + (3 * tile) // 4 - line // 2, tile - wl_h, line)
            _rect(arr, ty + tile // 2, tx, line, tile // 4)     # access straps
            _rect(arr, ty + tile // 2, tx + tile - tile // 4, line, tile // 4)
            _rect(arr, ty + tile // 2, tx + tile // 2 - 1, line, 3)  # storage node
    return arr


def _render_contact_cuts(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # randomly occupied cut sites, one Bernoulli draw per site
    arr = np.zeros((H, W), dtype=bool)
    side = _feature_px(spec.width_nm, ps)
    density = spec.density if spec.density > 0 else 0.7
    xs = _period_starts(spec.pitch_nm / ps, side, W)
    ys = _period_starts(spec.pitch_nm / ps, side, H)
    rng = np.random.default_rng(spec.seed)
    for y in ys:
        for x in xs:
            if rng.random() < density:
                _rect(arr, y, x, side, side)
    return arr


def _render_finfet(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # dense fin grating; pitch accumulates in nm so quantization is per fin
    arr = np.zeros((H, W), dtype=bool)
    fin = _feature_px(spec.width_nm, ps)
    for s in _period_starts(spec.pitch_nm / ps, fin, W):
        arr[:, s:s + fin] = True
    return arr


def _render_curvilinear(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # thin sinusoidal strokes, one pixel wide, connected vertically
    arr = np.zeros((H, W), dtype=bool)
    n_curves = 8
    amp = 6.0
    wavelength = max(16.0, spec.pitch_nm / ps)
    for i in range(n_curves):
        y0 = (i + 0.5) * H / n_curves
        phase = i * 1.3
        prev = None
        for x in range(W):
            y = int(round(y0 + amp * math.sin(2.0 * math.pi * x / wavelength + phase)))
            y = min(max(y, 0), H - 1)
            if prev is None:
                arr[y, x] = True
            else:
                lo, hi = min(prev, y), max(prev, y)
                arr[lo:hi + 1, x] = True
            prev = y
    return arr


def _render_gaafet(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # stacked nanosheet devices: three sheets per stack plus a gate stripe
    arr = np.zeros((H, W), dtype=bool)
    sheet_h = _feature_px(spec.width_nm, ps)
    gap = max(1, _feature_px(spec.pitch_nm, ps) - sheet_h)
    sheet_l = 28
    stack_h = 3 * sheet_h + 2 * gap
    tile_h = stack_h + 6
    tile_w = sheet_l + 4
    gate_w = 4
    for ty in _period_starts(float(tile_h), tile_h, H):
        for tx in _period_starts(float(tile_w), tile_w, W):
            for i in range(3):
                _rect(arr, ty + i * (sheet_h + gap), tx, sheet_h, sheet_l)
            _rect(arr, ty, tx + sheet_l // 2 - gate_w // 2, stack_h, gate_w)
    return arr


def _render_mbcfet(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # multi-bridge stacks: variable-width sheets joined by end bridges
    arr = np.zeros((H, W), dtype=bool)
    base = _feature_px(spec.width_nm, ps)
    sheet_l = 22
    gap = 2
    heights = (base, base + 1, base + 2)
    stack_h = sum(heights) + gap * (len(heights) - 1)
    tile_h = stack_h + 2
    tile_w = sheet_l + 2
    for ty in _period_starts(float(tile_h), tile_h, H):
        for tx in _period_starts(float(tile_w), tile_w, W):
            r = ty
            for h in heights:
                _rect(arr, r, tx, h, sheet_l)
                r += h + gap
            _rect(arr, ty, tx, stack_h, 1)                    # left bridge
            _rect(arr, ty, tx + sheet_l - 1, stack_h, 1)      # right bridge
    return arr


def _render_backside_power(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # horizontal delivery rails with through-vias bridging the gaps
    arr = np.zeros((H, W), dtype=bool)
    rail = _feature_px(spec.width_nm, ps)
    via = 2
    rails = _period_starts(spec.pitch_nm / ps, rail, H)
    for r in rails:
        arr[r:r + rail, :] = True
    for r in rails[:-1]:
        gap_top = r + rail
        gap_h = min(rails[rails.index(r) + 1] - gap_top, 3)
        for x in _period_starts(18.0, via, W):
            _rect(arr, gap_top, x, gap_h, via)
    return arr


def _render_cfet(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # complementary stacked devices: two thin-sheet pairs and a tie post
    arr = np.zeros((H, W), dtype=bool)
    sheet_h = _feature_px(spec.width_nm, ps)
    sheet_l = 23
    pair_gap = 2
    group_gap = 3
    stack_h = 4 * sheet_h + 2 * pair_gap + group_gap
    tile_h = stack_h + 2
    tile_w = sheet_l + 1
    for ty in _period_starts(float(tile_h), tile_h, H):
        for tx in _period_starts(float(tile_w), tile_w, W):
            r = ty
            for i in range(4):
                _rect(arr, r, tx, sheet_h, sheet_l)
                r += sheet_h + (group_gap if i == 1 else pair_gap)
            _rect(arr, ty, tx + sheet_l // 3, stack_h, 1)   # tie posts
            _rect(arr, ty, tx + (2 * sheet_l) // 3, stack_h, 1)
    return arr


def _render_high_na_sub8(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # anamorphic sub-8nm: single-pixel lines, two pitch regimes side by side
    arr = np.zeros((H, W), dtype=bool)
    half = W // 2
    for s in _period_starts(2.0, 1, half):
        arr[:, s] = True
    for s in _period_starts(2.5, 1, W - half):
        arr[:, half + s] = True
    return arr


def _render_strain(spec: PatternSpec, W: int, H: int, ps: float) -> np.ndarray:
    # compressive stripes on the left, wider tensile stripes on the right
    arr = np.zeros((H, W), dtype=bool)
    half = W // 2
    w_c = _feature_px(spec.width_nm, ps)
    p_c = spec.pitch_nm / ps
    for s in _period_starts(p_c, w_c, half):
        arr[:, s:s + w_c] = True
    w_t = w_c + 1
    p_t = p_c * (9.0 / 7.0)
    for s in _period_starts(p_t, w_t, W - half):
        arr[:, half + s:half + s + w_t] = True
    return arr


_RENDERERS = {
    "logic_gates": _render_logic_gates,
    "euv_line_space": _render_line_space,
    "euv_contacts": _render_contacts,
    "euv_metal": _render_euv_metal,
    "sti_pattern": _render_sti,
    "finfet_3nm": _render_finfet,
    "dram_arrays": _render_dram,
    "sram_cells": _render_sram,
    "contact_cuts": _render_contact_cuts,
    "high_na_lines": _render_line_space,
    "high_na_contacts": _render_contacts,
    "curvilinear": _render_curvilinear,
    "gaafet_nanosheets": _render_gaafet,
    "mbcfet": _render_mbcfet,
    "backside_power": _render_backside_power,
    "cfet": _render_cfet,
    "high_na_sub8": _render_high_na_sub8,
    "strain_engineering": _render_strain,
}


def render(spec: PatternSpec) -> fd.Field2D:
    """Rasterize a spec to a binary field; pure and deterministic."""
    if spec.kind not in _RENDERERS:
        raise GeometryError(f"unknown pattern kind {spec.kind!r}")
    if spec.pitch_nm <= 0 or spec.width_nm <= 0:
        raise GeometryError(f"pitch/width must be positive, got {spec.pitch_nm}/{spec.width_nm}")
    if spec.width_nm >= spec.pitch_nm and spec.kind not in ("curvilinear",):
        raise GeometryError(f"width {spec.width_nm} must be < pitch {spec.pitch_nm}")
    g = spec.grid
    arr = _RENDERERS[spec.kind](spec, g.width_px, g.height_px, g.pixel_size_nm)
    if spec.tx_px or spec.ty_px:
        arr = np.roll(arr, (spec.ty_px, spec.tx_px), axis=(0, 1))
    return fd.Field2D(g.width_px, g.height_px, g.pixel_size_nm, arr.astype(np.float64))


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def _min_run(arr: np.ndarray) -> int:
    """Smallest maximal run of True along any row or column."""
    best = arr.shape[0] * arr.shape[1]
    found = False
    for axis_arr in (arr, arr.T):
        for line in axis_arr:
            padded = np.concatenate(([False], line, [False]))
            changes = np.flatnonzero(padded[1:] != padded[:-1])
            if len(changes) == 0:
                continue
            runs = changes[1::2] - changes[0::2]
            if len(runs):
                found = True
                best = min(best, int(runs.min()))
    return best if found else 0


def stats(field2d: fd.Field2D, warnings: tuple[str, ...] = ()) -> PatternStats:
    vals = field2d.values
    if not np.all((vals == 0.0) | (vals == 1.0)):
        raise ContractError("stats requires a binary field")
    fill = float(vals.mean())
    run = _min_run(vals.astype(bool))
    return PatternStats(fill_ratio=fill, min_feature_nm=run * field2d.pixel_size_nm,
                        warnings=warnings)


def quantization_warnings(spec: PatternSpec) -> tuple[str, ...]:
    out = []
    ps = spec.grid.pixel_size_nm
    if spec.width_nm < ps:
        out.append(f"feature width {spec.width_nm} nm below one pixel ({ps} nm); "
                   "rendered at one pixel")
    if spec.pitch_nm < ps:
        out.append(f"pitch {spec.pitch_nm} nm below one pixel ({ps} nm)")
    return tuple(out)


def describe(spec: PatternSpec) -> PatternStats:
    return stats(render(spec), quantization_warnings(spec))


# ---------------------------------------------------------------------------
# dataset sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSample:
    spec: PatternSpec
    target: fd.Field2D


def default_dataset_size(base_seed: int) -> int:
    lo, hi = DATASET_SIZE_RANGE
    return int(np.random.default_rng([base_seed, 0xD5]).integers(lo, hi + 1))


def _jitter_window(canonical: float, bounds: tuple[float, float]) -> tuple[float, float]:
    lo = canonical * (1.0 - JITTER_FRACTION)
    hi = canonical * (1.0 + JITTER_FRACTION)
    if hi < bounds[0] or lo > bounds[1]:
        # canonical dimension sits outside the sampling range; jittering it
        # into range would change the pattern character, so keep it fixed
        return canonical, canonical
    return max(lo, bounds[0]), min(hi, bounds[1])


def sample_dataset(kind: str, n: int | None = None, base_seed: int = 0,
                   grid: GridSpec = GridSpec()) -> list[DatasetSample]:
    """Canonical template plus n-1 jittered variants.

    Sample 0 is always the unjittered catalog template. Jitter draws pitch
    and width uniformly from a window around the canonical dimensions
    intersected with the global sampling ranges, keeps width strictly below
    pitch, and applies small integer translations (bounded by one pitch).
    """
    if n is None:
        n = default_dataset_size(base_seed)
    if n < 1:
        raise GeometryError(f"dataset size must be >= 1, got {n}")
    canon = canonical_spec(kind, grid)
    samples = [DatasetSample(canon, render(canon))]
    p_lo, p_hi = _jitter_window(canon.pitch_nm, PITCH_RANGE_NM)
    w_lo, w_hi = _jitter_window(canon.width_nm, WIDTH_RANGE_NM)
    ps = grid.pixel_size_nm
    kind_idx = ALL_KINDS.index(kind)
    for i in range(1, n):
        rng = np.random.default_rng([base_seed, kind_idx, i])
        pitch = float(rng.uniform(p_lo, p_hi))
        width = float(rng.uniform(w_lo, w_hi))
        width = min(width, pitch - ps)  # geometry: width < pitch
        if width <= 0:
            width = pitch * 0.5
        t_cap = min(MAX_TRANSLATION_PX, max(1, int(pitch / ps) - 1))
        tx = int(rng.integers(-t_cap, t_cap + 1))
        ty = int(rng.integers(-t_cap, t_cap + 1))
        spec = replace(canon, pitch_nm=pitch, width_nm=width, tx_px=tx, ty_px=ty,
                       seed=int(rng.integers(0, 2**31 - 1)) if kind == "contact_cuts" else canon.seed)
        samples.append(DatasetSample(spec, render(spec)))
    return samples
