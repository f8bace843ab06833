import pytest

from src.config import (
    ConfigError,
    RunConfig,
    load_run_config,
    load_settings,
    parse_pooling,
    parse_run_config,
)
from src.network.vggnet import ContentLayer, PoolingMode


def test_empty_text_gives_defaults():
    assert parse_run_config("") == RunConfig()


def test_parse_all_sections():
    cfg = parse_run_config(
        """
        # transfer
        lambda_c = 0.02
        max_outer_iters = 5
        epsilon = 0.005
        content_layer = conv4_4
        pooling = avg
        seed = 9
        precision = float64
        snapshot_stages = 0, 5
        lbfgs_memory = 7
        lbfgs_max_inner_iters = 50
        refine_inner_iters = 12
        relative_terms = off

        detector = ocsvm
        nu = 0.2
        gamma = scale
        radius = 2
        """
    )
    iist, det = cfg.iist, cfg.detector
    assert iist.lambda_c == 0.02
    assert iist.max_outer_iters == 5
    assert iist.epsilon == 0.005
    assert iist.content_layer == ContentLayer.CONV4_4
    assert iist.pooling == PoolingMode.AVERAGE
    assert iist.seed == 9
    assert iist.precision == "float64"
    assert iist.snapshot_stages == frozenset({0, 5})
    assert iist.lbfgs.memory == 7 and iist.lbfgs.max_inner_iters == 50
    assert iist.refine_inner_iters == 12
    assert iist.relative_terms is False
    assert det.method == "ocsvm" and det.nu == 0.2 and det.gamma is None and det.radius == 2


def test_alpha_broadcast_and_list():
    assert parse_run_config("alpha = 0.5").iist.alpha == (0.5,) * 16
    listed = ",".join(str(i) for i in range(16))
    assert parse_run_config(f"alpha = {listed}").iist.alpha == tuple(float(i) for i in range(16))


def test_refine_budget_can_be_lifted():
    assert parse_run_config("refine_inner_iters = none").iist.refine_inner_iters is None
    assert RunConfig().iist.refine_inner_iters == 40


def test_base_config_is_kept():
    base = parse_run_config("seed = 4\nnu = 0.3")
    cfg = parse_run_config("lambda_c = 0.05", base=base)
    assert cfg.iist.seed == 4
    assert cfg.detector.nu == 0.3
    assert cfg.iist.lambda_c == 0.05


@pytest.mark.parametrize(
    "text",
    [
        "learning_rate = 0.1",
        "lambda_c = high",
        "lambda_c = 1.5",
        "max_outer_iters = -2",
        "refine_inner_iters = -1",
        "alpha = 1, 2",
        "pooling = median",
        "detector = kmeans",
        "nu = 0",
        "gamma = -1",
        "lambda_c 0.02",
    ],
)
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        parse_run_config(text)


def test_error_names_source():
    with pytest.raises(ConfigError, match="run.cfg"):
        parse_run_config("bogus = 1", source="run.cfg")


def test_parse_pooling_alias():
    assert parse_pooling(" AVG ") == PoolingMode.AVERAGE
    assert parse_pooling("max") == PoolingMode.MAX


def test_load_run_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("max_outer_iters = 0\n", encoding="utf-8")
    assert load_run_config(path).iist.max_outer_iters == 0
    assert load_run_config(None) == RunConfig()
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.cfg")


def test_load_settings(tmp_path, monkeypatch):
    monkeypatch.delenv("DHFF_VERBOSE", raising=False)
    monkeypatch.delenv("DHFF_PLOTS_DIR", raising=False)
    env = tmp_path / ".env"
    env.write_text("DHFF_PLOTS_DIR=figs\nDHFF_VERBOSE=yes\n", encoding="utf-8")
    settings = load_settings(env)
    assert settings.plots_dir == "figs"
    assert settings.verbose is True


def test_environment_wins_over_env_file(tmp_path, monkeypatch):
    monkeypatch.setenv("DHFF_VERBOSE", "0")
    env = tmp_path / ".env"
    env.write_text("DHFF_VERBOSE=1\n", encoding="utf-8")
    assert load_settings(env).verbose is False


def test_bad_verbose_value(tmp_path, monkeypatch):
    monkeypatch.setenv("DHFF_VERBOSE", "maybe")
    with pytest.raises(ConfigError):
        load_settings(tmp_path / "absent.env")
