import json

import numpy as np
import pytest

from regimevar.backtest import BacktestConfig
from regimevar.bundle import ModelBundle
from regimevar.config import build_config, parse_overrides, read_config_file, render_config
from regimevar.errors import ConfigError, DataError
from regimevar.gaussian import MvGaussian, fit_gaussian
from regimevar.hmm import baum_welch
from regimevar.regimenet import BackboneSpec, TrainConfig, train
from regimevar.synthetic import regime_switching, two_regime_equity


def test_defaults():
    cfg = build_config()
    assert cfg == BacktestConfig()
    assert (cfg.window_days, cfg.horizon_days, cfg.paths, cfg.levels) == (2000, 5, 100_000, (0.01, 0.05))


def test_file_then_overrides(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("window = 1000\npaths = 5000  # fewer paths\nmodels = classic, lstm+hmm\n"
                 "levels = 0.01,0.05,0.1\n")
    values = read_config_file(p)
    cfg = build_config(values, parse_overrides(["paths=200", "k=3"]))
    assert cfg.window_days == 1000 and cfg.paths == 200 and cfg.regimes == 3
    assert cfg.models == ("classic", "lstm+hmm")
    assert cfg.levels == (0.01, 0.05, 0.1)


def test_model_sections(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[backtest]\nmodels = lstm, cnn\nepochs = 100\n\n[model cnn]\nepochs = 30\n")
    cfg = build_config(read_config_file(p))
    assert cfg.model_overrides == (("tcn", (("epochs", 30),)),)


@pytest.mark.parametrize("text", ["bogus = 1\n", "paths = many\n", "[other]\nx = 1\n", "window\n"])
def test_bad_files(tmp_path, text):
    p = tmp_path / "bad.ini"
    p.write_text(text)
    with pytest.raises(ConfigError):
        build_config(read_config_file(p))


def test_bad_overrides():
    with pytest.raises(ConfigError):
        parse_overrides(["paths"])
    with pytest.raises(ConfigError):
        parse_overrides(["nonsense=3"])
    with pytest.raises(ConfigError):
        read_config_file("/nonexistent/run.ini")


def test_render_roundtrip(tmp_path):
    cfg = BacktestConfig(window_days=900, levels=(0.01, 0.1), models=("classic", "ff+reg=2"),
                         model_overrides={"ff+reg=2": {"learning_rate": 0.003}})
    p = tmp_path / "c.ini"
    p.write_text(render_config(cfg))
    assert build_config(read_config_file(p)) == cfg


# bundles

def test_classic_bundle_roundtrip(tmp_path, rng):
    g = fit_gaussian(rng.normal(size=(300, 2)) * 0.01)
    path = tmp_path / "m.json"
    ModelBundle("classic", ("a", "b"), g).save(path)
    back = ModelBundle.load(path)
    assert back.kind == "classic" and back.asset_names == ("a", "b")
    np.testing.assert_array_equal(back.model.cov_factor, g.cov_factor)


def test_classic_bundle_quantile_matches_normal(rng):
    g = MvGaussian.from_cov([0.0], [[1e-4]])
    b = ModelBundle("classic", ("a",), g)
    paths = b.simulate(np.zeros((10, 1)), 1, 100_000, np.random.default_rng(0))
    assert abs(np.quantile(paths[:, 0, 0], 0.05) + 1.6449 * 0.01) < 3e-4


def test_hmm_and_net_bundles(tmp_path):
    data, _ = regime_switching(two_regime_equity(), 400, np.random.default_rng(2))
    hmm = baum_welch(data, 2, np.random.default_rng(0))
    net = train(data, BackboneSpec.lstm(), TrainConfig(window_days=400, attempts=1, epochs=3), hmm)
    for model_id, model in (("hmm", hmm), ("lstm+hmm", net)):
        path = tmp_path / f"{model_id}.json"
        ModelBundle(model_id, data.asset_names, model).save(path)
        back = ModelBundle.load(path)
        a = back.simulate(data.returns, 5, 50, np.random.default_rng(1))
        b = ModelBundle(model_id, data.asset_names, model).simulate(data.returns, 5, 50, np.random.default_rng(1))
        np.testing.assert_array_equal(a, b)


def test_bundle_version_mismatch(tmp_path, rng):
    d = ModelBundle("classic", ("a",), fit_gaussian(rng.normal(size=(20, 1)))).to_dict()
    d["version"] = 2
    p = tmp_path / "m.json"
    p.write_text(json.dumps(d))
    with pytest.raises(DataError, match="version"):
        ModelBundle.load(p)
    p.write_text(json.dumps({"format": "something else"}))
    with pytest.raises(DataError):
        ModelBundle.load(p)
    p.write_text("{not json")
    with pytest.raises(DataError):
        ModelBundle.load(p)


def test_bundle_asset_count_checked(rng):
    b = ModelBundle("classic", ("a",), fit_gaussian(rng.normal(size=(20, 1))))
    with pytest.raises(DataError):
        b.simulate(np.zeros((5, 2)), 1, 10, rng)
