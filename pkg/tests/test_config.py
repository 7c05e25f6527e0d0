import pytest
from hypothesis import given, settings, strategies as st

from certlab.config import (ConfigError, ExperimentConfig, dumps_config, get_preset, load_config,
                            loads_config, presets)
from certlab.training import TrainConfig


def test_every_preset_roundtrips():
    for name, cfg in presets().items():
        back = loads_config(dumps_config(cfg))
        assert dumps_config(back) == dumps_config(cfg), name


def test_toy_presets_share_hyperparameters():
    toy = {n: c for n, c in presets().items() if n.startswith("toy-")}
    assert len(toy) == 7
    ref = next(iter(toy.values())).train
    for c in toy.values():
        t = c.train
        assert (t.epochs, t.warmup, t.rampup, t.batch_size, t.eps_train) == (110, 10, 50, 64, 0.3)
        assert (t.lr, t.kappa_end, t.seed) == (ref.lr, ref.kappa_end, ref.seed)
        assert c.dims == (16, 20, 20, 10)


def test_preset_seed_override():
    cfg = get_preset("desk-box", seed=4)
    assert cfg.seed == 4 and cfg.train.seed == 4
    with pytest.raises(ConfigError):
        get_preset("nope")


@pytest.mark.parametrize("text", [
    "[train]\nkind = Box\nbogus = 1\n",
    "[train]\nepochs = ten\n",
    "[train]\nkind = Zonotope\n",
    "[train]\nepochs = 5\nwarmup = 4\nrampup = 4\n",
    "[experiment]\ndims = 4\n",
    "[experiment]\ncolour = red\n",
    "not an ini",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        loads_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.ini")


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["Box", "hBox", "DeepZ", "CROWN", "CROWN-IBP(R)", "CROWN-IBP", "Triangle"]),
       st.floats(0, 1), st.integers(1, 50), st.integers(0, 5), st.booleans())
def test_config_roundtrip(kind, eps, epochs, warm, elision):
    cfg = ExperimentConfig(TrainConfig(kind=kind, eps_train=eps, epochs=epochs, warmup=min(warm, epochs),
                                       rampup=0, elision=elision, lr_milestones=((3, 0.5),)))
    assert dumps_config(loads_config(dumps_config(cfg))) == dumps_config(cfg)
