"""Tests for flat config files, validation and hashing."""

import pytest

from fimrec.config import (
    PromoWindow,
    RunConfig,
    SyntheticConfig,
    build_config,
    config_hash,
    dump_flat,
    flatten,
    load_config,
    nest,
    parse_flat,
)
from fimrec.errors import ConfigError


class TestParseFlat:
    def test_comments_and_blank_lines(self):
        text = "# run\nlr = 0.05\n\nfpem.p = 3  # truncation\n"
        assert parse_flat(text) == {"lr": "0.05", "fpem.p": "3"}

    def test_missing_equals_names_the_line(self):
        with pytest.raises(ConfigError, match="run.cfg:2"):
            parse_flat("lr = 0.1\nbogus\n", "run.cfg")

    def test_nest(self):
        assert nest({"a": 1, "b.c": 2, "b.d": 3}) == {"a": 1, "b": {"c": 2, "d": 3}}

    def test_nest_conflict(self):
        with pytest.raises(ConfigError):
            nest({"fpem": "1", "fpem.p": "2"})


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.lr == 0.01
        assert cfg.batch_size == 256
        assert cfg.dims == 4
        assert cfg.alpha == 0.5
        assert cfg.mss.views == ("author", "brand", "category", "price")
        assert cfg.fpem.p == 5
        assert cfg.mmoe.experts == 4
        assert cfg.mmoe.tasks == ("click", "purchase")
        assert cfg.primary_task == "purchase"

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("lr = 0.05\nseed = 3\nmss.views = price, author\n")
        cfg = load_config(RunConfig, path, ["seed = 9", "fpem.fusion = direct"])
        assert cfg.lr == 0.05
        assert cfg.seed == 9
        assert cfg.mss.views == ("author", "price")
        assert cfg.fpem.fusion == "direct"

    def test_empty_view_set(self):
        assert build_config(RunConfig, {"mss.views": "none"}).mss.views == ()
        assert build_config(RunConfig, {"mss.views": ""}).mss.views == ()

    def test_unknown_key_is_named(self):
        with pytest.raises(ConfigError, match="fpem.bogus"):
            build_config(RunConfig, {"fpem.bogus": "1"})

    def test_bad_value_is_named(self):
        with pytest.raises(ConfigError, match="fpem.fc"):
            build_config(RunConfig, {"fpem.fc": "0.7"})

    def test_unknown_view(self):
        with pytest.raises(ConfigError, match="mss.views"):
            build_config(RunConfig, {"mss.views": "author, colour"})

    def test_truncation_position_bounded_by_spectrum(self):
        cfg = build_config(RunConfig, {"max_len": "14", "fpem.p": "4"})
        assert cfg.fpem.p == 4
        with pytest.raises(ConfigError, match="fpem.p"):
            build_config(RunConfig, {"max_len": "14", "fpem.p": "5"})

    def test_truncation_bound_ignored_without_fpem(self):
        flat = {"max_len": "14", "fpem.p": "5", "fpem.enabled": "false"}
        assert build_config(RunConfig, flat).fpem.p == 5

    def test_primary_task_must_be_predicted(self):
        with pytest.raises(ConfigError, match="primary_task"):
            build_config(RunConfig, {"mmoe.tasks": "click"})

    def test_baseline(self):
        cfg = build_config(RunConfig, {"baseline": "true", "mss.search_mode": "soft"})
        assert cfg.fpem.enabled is False
        assert cfg.mss.views == ("category",)
        assert cfg.mss.search_mode == "hard"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(RunConfig, tmp_path / "absent.cfg")

    def test_dump_reads_back(self):
        cfg = build_config(
            RunConfig,
            {"mss.views": "brand", "cutoff_step": "5", "fpem.mode": "butter"},
        )
        assert build_config(RunConfig, parse_flat(dump_flat(cfg))) == cfg

    def test_dump_reads_back_empty_views(self):
        cfg = build_config(RunConfig, {"mss.views": "none"})
        assert build_config(RunConfig, parse_flat(dump_flat(cfg))) == cfg

    def test_flatten_uses_dotted_keys(self):
        flat = flatten(RunConfig())
        assert flat["fpem.p"] == 5
        assert flat["mss.views"] == ["author", "brand", "category", "price"]


class TestConfigHash:
    def test_stable(self):
        assert config_hash(RunConfig()) == config_hash(RunConfig())

    def test_sensitive_to_values(self):
        other = build_config(RunConfig, {"seed": "1"})
        assert config_hash(RunConfig()) != config_hash(other)

    def test_hex_digest(self):
        digest = config_hash(RunConfig())
        assert len(digest) == 64
        int(digest, 16)


class TestSyntheticConfig:
    def test_maps_and_lists(self):
        cfg = build_config(
            SyntheticConfig,
            {
                "periods": "coffee:2, travel:13",
                "browse_categories": "books, toys",
                "user_categories": "1",
                "promo_windows": "10-20:2.5",
                "price_ranges": "coffee:1-3",
            },
        )
        assert cfg.periods == {"coffee": 2, "travel": 13}
        assert cfg.categories == ("coffee", "travel", "books", "toys")
        assert cfg.promo_windows == (PromoWindow(start=10, end=20, boost=2.5),)
        assert cfg.price_range("coffee") == (1.0, 3.0)
        assert cfg.price_range("travel") == (5.0, 50.0)

    def test_promo_window_is_half_open(self):
        window = PromoWindow(start=10, end=20, boost=2.0)
        assert window.contains(10)
        assert window.contains(19)
        assert not window.contains(20)

    def test_probabilities_bounded(self):
        with pytest.raises(ConfigError, match="exploration_rate"):
            build_config(SyntheticConfig, {"exploration_rate": "1.5"})

    def test_periods_positive(self):
        with pytest.raises(ConfigError, match="periods"):
            build_config(SyntheticConfig, {"periods": "coffee:0"})

    def test_too_many_user_categories(self):
        with pytest.raises(ConfigError, match="user_categories"):
            build_config(
                SyntheticConfig, {"periods": "coffee:2", "user_categories": "2"}
            )

    def test_malformed_promo(self):
        with pytest.raises(ConfigError, match="promo_windows"):
            build_config(SyntheticConfig, {"promo_windows": "10:2"})
