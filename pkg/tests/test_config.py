import pytest

from iqa_rl.config import EngineConfig, FIELDS, dump_config, load_config, parse_config
from iqa_rl.errors import ConfigError


class TestConfig:
    def test_defaults_match_dataclass(self):
        assert load_config() == EngineConfig()

    def test_dotted_keys(self):
        assert FIELDS["klc.p"] == "klc_p"
        assert FIELDS["resample.K"] == "resample_K"
        assert FIELDS["sim.lr"] == "sim_lr"
        assert FIELDS["eval.mos_file"] == "eval_mos_file"
        assert FIELDS["v_floor"] == "v_floor"

    def test_round_trip(self, tmp_path):
        cfg = EngineConfig().replace(sigma=0.123456789, klc_p=0.3, eval_mos_file="/data/mos.txt")
        path = tmp_path / "c.cfg"
        path.write_text(dump_config(cfg))
        assert load_config(path) == cfg

    def test_overlay_keeps_defaults(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# demo\nalpha = 0.5\n\n")
        cfg = load_config(path)
        assert cfg.alpha == 0.5 and cfg.beta == 2.0

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("gamma = 3")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config("group_size = eight")

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_config("sigma 0.3")

    @pytest.mark.parametrize("line", ["sigma = 0", "eps_clip = 1.5", "klc.p = 0", "group_size = 1", "vrf.iou_min = 0"])
    def test_validation(self, line):
        with pytest.raises(ConfigError):
            parse_config(line)

    def test_shipped_collapse_config(self):
        from pathlib import Path

        from iqa_rl.sim import collapse_config

        path = Path(__file__).resolve().parents[1] / "configs" / "collapse.cfg"
        assert load_config(path) == collapse_config()
