"""Adam updates, training loop determinism, ablation ladder."""

from dataclasses import replace

import numpy as np
import pytest

from euv_ilt import optimizer, patterns, physics
from euv_ilt.errors import ConfigError, NumericalAbort

SMALL_GRID = patterns.GridSpec(width_px=32, height_px=32,
                               pixel_size_nm=patterns.GridSpec().pixel_size_nm)


def tiny_config(**overrides):
    base = dict(kind="euv_contacts", epochs=2, dataset_size=3, seed=0,
                grid=SMALL_GRID)
    base.update(overrides)
    return optimizer.TrainConfig(**base)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = {"w": np.array([1.0, -2.0])}
        state = optimizer.AdamState.for_params(params)
        out = optimizer.adam_step(state, params, {"w": np.zeros(2)}, lr=0.1)
        np.testing.assert_array_equal(out["w"], params["w"])

    def test_first_step_is_signed_lr(self):
        # bias correction makes the first update -lr * g/(|g| + eps-ish);
        # for |g| far above eps this is lr * sign(g)
        params = {"w": np.array([0.0, 0.0])}
        state = optimizer.AdamState.for_params(params)
        out = optimizer.adam_step(state, params,
                                  {"w": np.array([3.0, -0.5])}, lr=1e-2)
        np.testing.assert_allclose(out["w"], [-1e-2, 1e-2], rtol=1e-6)

    def test_steady_state_step_magnitude_bounded_by_lr(self):
        params = {"w": np.array(0.0)}
        state = optimizer.AdamState.for_params(params)
        for _ in range(1000):
            prev = params["w"]
            params = optimizer.adam_step(state, params, {"w": np.array(1.0)},
                                         lr=1e-3)
        assert abs(params["w"] - prev) <= 1e-3 * 1.01

    def test_per_name_learning_rates(self):
        params = {"a": np.array(0.0), "b": np.array(0.0)}
        state = optimizer.AdamState.for_params(params)
        out = optimizer.adam_step(state, params,
                                  {"a": np.array(1.0), "b": np.array(1.0)},
                                  lr={"a": 1e-4, "b": 1e-2})
        assert abs(out["a"]) == pytest.approx(1e-4, rel=1e-5)
        assert abs(out["b"]) == pytest.approx(1e-2, rel=1e-5)

    def test_nonfinite_gradient_aborts_with_param_name(self):
        params = {"raw_blur": np.array(0.0)}
        state = optimizer.AdamState.for_params(params)
        with pytest.raises(NumericalAbort) as err:
            optimizer.adam_step(state, params,
                                {"raw_blur": np.array(np.nan)}, lr=1e-2)
        assert "raw_blur" in str(err.value)

    def test_momentum_accumulates_direction(self):
        params = {"w": np.array(0.0)}
        state = optimizer.AdamState.for_params(params)
        for _ in range(50):
            params = optimizer.adam_step(state, params, {"w": np.array(2.0)},
                                         lr=1e-2)
        assert params["w"] < -0.3  # 50 near-constant steps of ~lr


class TestTrainConfig:
    def test_defaults(self):
        cfg = optimizer.TrainConfig()
        assert cfg.generator_mode == "pixel_direct"
        assert cfg.epochs == 500
        assert cfg.lr_generator == 1e-4
        assert cfg.lr_physics == 1e-2
        assert cfg.loss_target == "canonical"
        assert cfg.warm_start and cfg.train_physics

    def test_validation(self):
        with pytest.raises(ConfigError):
            optimizer.TrainConfig(kind="warp_field")
        with pytest.raises(ConfigError):
            optimizer.TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            optimizer.TrainConfig(generator_mode="gan")
        with pytest.raises(ConfigError):
            optimizer.TrainConfig(loss_target="metropolis")
        with pytest.raises(ConfigError):
            optimizer.TrainConfig(lr_generator=-1.0)


class TestTrainLoop:
    def test_smoke_run_structure(self):
        res = optimizer.train(tiny_config())
        assert len(res.history) == 2
        assert [r.epoch for r in res.history] == [0, 1]
        assert res.final_epe_nm >= 0.0
        assert res.best_epe_nm <= res.final_epe_nm + 1e-12
        assert res.final_mask.shape == (32, 32)
        assert res.final_aerial.shape == (32, 32)
        assert not res.aborted
        assert res.wall_seconds > 0

    def test_history_rows_carry_losses_and_params(self):
        res = optimizer.train(tiny_config())
        row = res.history[0]
        assert row.losses.total > 0
        assert row.effective.blur_sigma_px > 0.5
        assert np.isfinite(row.epe_nm)

    def test_deterministic_given_seed(self):
        a = optimizer.train(tiny_config(seed=11))
        b = optimizer.train(tiny_config(seed=11))
        assert a.final_epe_nm == b.final_epe_nm
        np.testing.assert_array_equal(a.final_mask, b.final_mask)
        for ra, rb in zip(a.history, b.history):
            assert ra.losses.total == rb.losses.total
            assert ra.epe_nm == rb.epe_nm

    def test_seed_changes_trajectory_for_mini(self):
        a = optimizer.train(tiny_config(generator_mode="mini_cnn", seed=0,
                                        loss_target="sample"))
        b = optimizer.train(tiny_config(generator_mode="mini_cnn", seed=1,
                                        loss_target="sample"))
        assert a.history[-1].losses.total != b.history[-1].losses.total

    def test_frozen_physics_keeps_raws(self):
        res = optimizer.train(tiny_config(train_physics=False))
        assert res.final_raws == {name: 0.0 for name in physics.RAW_PARAM_NAMES}

    def test_trained_physics_moves_raws(self):
        res = optimizer.train(tiny_config(epochs=3))
        assert any(v != 0.0 for v in res.final_raws.values())

    def test_stage_flags_respected(self):
        res = optimizer.train(tiny_config(stage_flags=physics.StageFlags.none()))
        # stages off: aerial is the raw sigmoid mask
        assert res.final_effective is not None
        np.testing.assert_allclose(res.final_aerial, res.final_mask)

    def test_history_csv_deterministic_bytes(self, tmp_path):
        res = optimizer.train(tiny_config(seed=3))
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        optimizer.write_history_csv(str(p1), res.history)
        optimizer.write_history_csv(str(p2), res.history)
        b1, b2 = p1.read_bytes(), p2.read_bytes()
        assert b1 == b2
        header = b1.split(b"\n", 1)[0].decode()
        assert header == ",".join(optimizer.HISTORY_COLUMNS)

    def test_nan_loss_aborts_cleanly(self, monkeypatch):
        from euv_ilt import objective

        real = objective.taped_total_loss

        def sabotaged(tape, aerial, target_values, raws, weights):
            out = real(tape, aerial, target_values, raws, weights)
            out.total.value = np.array(np.nan)
            return out

        monkeypatch.setattr(optimizer, "taped_total_loss", sabotaged)
        res = optimizer.train(tiny_config())
        assert res.aborted
        assert res.abort_reason
        assert len(res.history) <= 1


class TestAblation:
    def test_config_defaults(self):
        cfg = optimizer.ablation_config("dram_arrays")
        assert cfg.generator_mode == "pixel_direct"
        assert cfg.epochs == 400
        assert cfg.dataset_size == 8
        assert cfg.grid.width_px == 64
        assert cfg.loss_target == "canonical"
        assert cfg.lr_generator == pytest.approx(3e-3)
        assert not cfg.train_physics
        eff = physics.activate(cfg.init_raws)
        assert eff.blur_sigma_px == pytest.approx(0.9)

    def test_full_row_scored_under_its_own_model(self):
        # the full row trains through the same five stages it is scored
        # under, so the ablation EPE must equal the row's training EPE
        cfg = replace(optimizer.ablation_config("euv_contacts"),
                      epochs=2, dataset_size=2, grid=SMALL_GRID)
        res = optimizer.ablate(cfg, stages=(physics.ABLATION_STAGES[-1],))
        trained = optimizer.train(
            replace(cfg, stage_flags=physics.StageFlags.all()))
        assert res.rows[0].epe_nm == trained.final_epe_nm

    def test_row_labels_in_order(self):
        cfg = replace(optimizer.ablation_config("euv_contacts"),
                      epochs=1, dataset_size=2, grid=SMALL_GRID)
        res = optimizer.ablate(cfg)
        assert [r.stage for r in res.rows] == [
            "no_physics", "+diffraction", "+absorption", "+blur", "+phase",
            "full_physics"]
        assert res.rows[0].improvement_pct_vs_no_physics == 0.0
        assert res.kind == "euv_contacts"
        assert len(res.final_aerials) == 6

    def test_improvement_definition(self):
        cfg = replace(optimizer.ablation_config("euv_contacts"),
                      epochs=1, dataset_size=2, grid=SMALL_GRID)
        res = optimizer.ablate(cfg)
        base = res.rows[0].epe_nm
        for row in res.rows[1:]:
            want = (base - row.epe_nm) / base * 100.0
            assert row.improvement_pct_vs_no_physics == pytest.approx(want)

    def test_subset_of_stages(self):
        cfg = replace(optimizer.ablation_config("euv_contacts"),
                      epochs=1, dataset_size=2, grid=SMALL_GRID)
        stages = (physics.ABLATION_STAGES[0], physics.ABLATION_STAGES[-1])
        res = optimizer.ablate(cfg, stages=stages)
        assert [r.stage for r in res.rows] == ["no_physics", "full_physics"]

    def test_ablation_csv_format(self, tmp_path):
        cfg = replace(optimizer.ablation_config("euv_contacts"),
                      epochs=1, dataset_size=2, grid=SMALL_GRID)
        res = optimizer.ablate(cfg)
        path = tmp_path / "ablation.csv"
        optimizer.write_ablation_csv(str(path), res)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "stage,epe_nm,improvement_pct_vs_no_physics"
        assert len(lines) == 7
        assert lines[1].startswith("no_physics,")
