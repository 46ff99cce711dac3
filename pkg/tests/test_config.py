import pytest

from ppgpair.config import RunConfig, load, parse_text
from ppgpair.errors import ConfigError


def test_defaults_render_and_reparse():
    run = RunConfig()
    assert load(overrides=parse_text(run.render())) == run


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nseed = 4\n\nn_blocks = 2   # trailing\nlearning_rate=0.01\n")
    run = load(path, {"seed": "9"})
    assert (run.seed, run.n_blocks, run.learning_rate) == (9, 2, 0.01)


def test_types_coerced():
    run = load(overrides={"bad_threshold": "0.3", "threads": "2", "task": "binary_classification"})
    assert run.bad_threshold == 0.3 and run.threads == 2 and run.task == "binary_classification"


@pytest.mark.parametrize("text", ["nonsense = 1", "seed", "seed = one", "threads = 0", "metric = rmse",
                                  "n_stages = 0", "hr_min = 200", "precision = float16", "projector_norm = none"])
def test_invalid_settings_rejected(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text + "\n")
    with pytest.raises(ConfigError):
        load(path)


def test_unknown_override_rejected():
    with pytest.raises(ConfigError):
        load(overrides={"colour": "red"})


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "absent.cfg")


def test_module_configs():
    run = RunConfig(n_blocks=6, learning_rate=0.1, seed=3)
    assert run.encoder_config().n_blocks == 6
    assert run.encoder_config().input_length == 1200
    tc = run.train_config(learning_rate=0.002, epochs_per_stage=0)
    assert (tc.learning_rate, tc.epochs_per_stage, tc.seed) == (0.002, 0, 3)
