import pytest
import yaml

from echobench.config import (
    TRAINING_MODES,
    build_run_config,
    load_run_config,
)
from echobench.data import ViewLabel
from echobench.encoders import EncodingMode
from echobench.errors import ConfigError


def minimal() -> dict:
    return {"seed": 3, "gen": {"n_studies": 40}}


class TestSchemaBasics:
    def test_minimal_config_materializes_defaults(self):
        run = build_run_config(minimal())
        assert run.seed == 3
        assert run.gen.n_studies == 40
        assert run.gen.seed == 3
        assert run.split_ratios == (0.875, 0.025, 0.1)
        assert run.dims.hidden == 64
        assert run.recall_ks == (1, 5, 10)
        assert set(run.train) == set(TRAINING_MODES)
        assert str(run.out) == "runs"

    def test_missing_seed_named(self):
        with pytest.raises(ConfigError, match="seed: required"):
            build_run_config({"gen": {"n_studies": 10}})

    def test_missing_gen_named(self):
        with pytest.raises(ConfigError, match="gen: required"):
            build_run_config({"seed": 1})

    def test_missing_n_studies_named(self):
        with pytest.raises(ConfigError, match="gen.n_studies: required"):
            build_run_config({"seed": 1, "gen": {}})

    def test_unknown_top_level_key_rejected(self):
        payload = minimal()
        payload["generator"] = {}
        with pytest.raises(ConfigError, match="generator: unknown key"):
            build_run_config(payload)

    def test_unknown_nested_key_rejected_with_path(self):
        payload = minimal()
        payload["gen"]["n_studys"] = 5
        with pytest.raises(ConfigError, match=r"gen.n_studys: unknown key"):
            build_run_config(payload)

    def test_bool_rejected_for_int(self):
        payload = minimal()
        payload["gen"]["n_studies"] = True
        with pytest.raises(ConfigError, match="gen.n_studies: expected an integer"):
            build_run_config(payload)

    def test_non_mapping_document_rejected(self):
        with pytest.raises(ConfigError, match="expected a mapping"):
            build_run_config([1, 2])

    def test_gen_seed_rejected(self):
        payload = minimal()
        payload["gen"]["seed"] = 5
        with pytest.raises(ConfigError, match="gen.seed: set by the global seed"):
            build_run_config(payload)


class TestSections:
    def test_split_ratios_built(self):
        payload = minimal()
        payload["split"] = {"ratios": [0.5, 0.25, 0.25]}
        assert build_run_config(payload).split_ratios == (0.5, 0.25, 0.25)

    def test_split_ratios_must_sum_to_one(self):
        payload = minimal()
        payload["split"] = {"ratios": [0.5, 0.25, 0.5]}
        with pytest.raises(ConfigError, match="split.ratios: must sum to 1"):
            build_run_config(payload)

    def test_split_ratio_count_checked(self):
        payload = minimal()
        payload["split"] = {"ratios": [0.5, 0.5]}
        with pytest.raises(ConfigError, match="split.ratios: expected 3"):
            build_run_config(payload)

    def test_dims_section(self):
        payload = minimal()
        payload["dims"] = {"hidden": 256, "embed_dim": 96}
        dims = build_run_config(payload).dims
        assert dims.hidden == 256
        assert dims.embed_dim == 96
        assert dims.frame_embed_dim == 32

    def test_dims_follow_gen_feature_sizes(self):
        payload = minimal()
        payload["gen"]["frame_dim"] = 48
        payload["gen"]["text_dim"] = 30
        dims = build_run_config(payload).dims
        assert dims.frame_dim == 48
        assert dims.text_dim == 30

    def test_dims_frame_dim_rejected(self):
        payload = minimal()
        payload["dims"] = {"frame_dim": 16}
        with pytest.raises(ConfigError, match="dims.frame_dim: set by gen"):
            build_run_config(payload)

    def test_train_overrides_one_mode(self):
        payload = minimal()
        payload["train"] = {"multi_video": {"total_steps": 123, "warmup_steps": 10}}
        run = build_run_config(payload)
        assert run.train[EncodingMode.MULTI_VIDEO].total_steps == 123
        assert run.train[EncodingMode.SINGLE_VIDEO].total_steps == 5000

    def test_train_mode_seeds_differ(self):
        run = build_run_config(minimal())
        seeds = {cfg.seed for cfg in run.train.values()}
        assert len(seeds) == len(TRAINING_MODES)

    def test_train_rejects_inference_only_mode(self):
        payload = minimal()
        payload["train"] = {"multi_video_4ch": {}}
        with pytest.raises(ConfigError, match="multi_video_4ch"):
            build_run_config(payload)

    def test_train_rejects_unknown_mode(self):
        payload = minimal()
        payload["train"] = {"dual_video": {}}
        with pytest.raises(ConfigError, match="train.dual_video: unknown mode"):
            build_run_config(payload)

    def test_train_rejects_explicit_seed(self):
        payload = minimal()
        payload["train"] = {"multi_video": {"seed": 5}}
        with pytest.raises(ConfigError, match="derived"):
            build_run_config(payload)

    def test_train_invalid_value_wrapped(self):
        payload = minimal()
        payload["train"] = {"multi_video": {"batch_size": 1}}
        with pytest.raises(ConfigError, match="train.multi_video"):
            build_run_config(payload)

    def test_recall_ks_built(self):
        payload = minimal()
        payload["eval"] = {"recall_ks": [1, 10]}
        assert build_run_config(payload).recall_ks == (1, 10)

    def test_recall_ks_must_increase(self):
        payload = minimal()
        payload["eval"] = {"recall_ks": [10, 5]}
        with pytest.raises(ConfigError, match="strictly increasing"):
            build_run_config(payload)

    def test_severity_probs_parsed(self):
        payload = minimal()
        payload["gen"]["severity_probs"] = [0.7, 0.1, 0.1, 0.1]
        assert build_run_config(payload).gen.severity_probs == (0.7, 0.1, 0.1, 0.1)

    def test_bad_severity_probs_named(self):
        payload = minimal()
        payload["gen"]["severity_probs"] = [0.7, 0.1, 0.1]
        with pytest.raises(ConfigError, match="gen: "):
            build_run_config(payload)

    def test_view_masks_parsed(self):
        payload = minimal()
        payload["gen"]["view_masks"] = {
            "LAX": [0, 1, 2, 3, 4, 5],
            "SAX": [0, 1, 2, 3, 4, 5],
            "2CH": [0, 1, 2, 6, 7],
            "3CH": [3, 4, 5, 8, 9],
            "4CH": [0, 1, 2, 3, 4, 5],
        }
        run = build_run_config(payload)
        assert run.gen.view_masks[ViewLabel.CH2] == (0, 1, 2, 6, 7)

    def test_view_masks_unknown_view_named(self):
        payload = minimal()
        payload["gen"]["view_masks"] = {"5CH": [0]}
        with pytest.raises(ConfigError, match="gen.view_masks.5CH: unknown view"):
            build_run_config(payload)

    def test_view_masks_missing_view_named(self):
        payload = minimal()
        payload["gen"]["view_masks"] = {"LAX": [0, 1]}
        with pytest.raises(ConfigError, match="gen.view_masks: missing view"):
            build_run_config(payload)

    def test_view_clip_rate_parsed(self):
        payload = minimal()
        payload["gen"]["view_clip_rate"] = {
            "LAX": 1.0, "SAX": 1.0, "2CH": 0.5, "3CH": 0.5, "4CH": 2.0
        }
        run = build_run_config(payload)
        assert run.gen.view_clip_rate[ViewLabel.CH4] == 2.0


class TestOverridesAndStreams:
    def test_seed_override_rewires_everything(self):
        base = build_run_config(minimal())
        overridden = build_run_config(minimal(), seed_override=11)
        assert overridden.seed == 11
        assert overridden.gen.seed == 11
        for mode in TRAINING_MODES:
            assert overridden.train[mode].seed != base.train[mode].seed

    def test_seed_override_fills_missing_seed(self):
        run = build_run_config({"gen": {"n_studies": 5}}, seed_override=2)
        assert run.seed == 2

    def test_out_override(self):
        run = build_run_config(minimal(), out_override="elsewhere")
        assert str(run.out) == "elsewhere"

    def test_train_seed_matches_derivation(self):
        run = build_run_config(minimal())
        for mode in TRAINING_MODES:
            assert run.train[mode].seed == run.train_seed(mode)


class TestLoadFile:
    def test_round_trip_through_yaml(self, tmp_path):
        doc = {
            "seed": 4,
            "out": "some/dir",
            "gen": {"n_studies": 30, "noise_frame": 0.02},
            "eval": {"recall_ks": [1, 5]},
        }
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(doc))
        run = load_run_config(path)
        assert run.seed == 4
        assert run.gen.noise_frame == 0.02
        assert str(run.out) == "some/dir"

    def test_missing_file_raises_config_error(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_run_config(tmp_path / "absent.yaml")

    def test_invalid_yaml_raises_config_error(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("seed: [unclosed\n")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_run_config(path)
