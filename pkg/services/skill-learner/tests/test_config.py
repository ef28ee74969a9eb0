"""
Загрузка конфигурации.
"""

import pytest

from shared.models.errors import ConfigError

from learner.config import Settings
from learner.synth_data import SPLIT_TASKS


def _write(tmp_path, text):
    path = tmp_path / "learner.env"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults():
    settings = Settings.from_file()
    assert settings.gmm_components == 16
    assert settings.sigma_level_values() == [1.0, 2.0, 3.0]
    assert settings.mc_sample_counts() == [50, 100, 200, 500, 1000, 2000, 5000, 10000]
    assert settings.task_list() == list(SPLIT_TASKS)
    assert settings.mlp_hidden_sizes() == [128, 64]


def test_file_values(tmp_path):
    settings = Settings.from_file(_write(tmp_path, "GMM_COMPONENTS=8\nMC_SAMPLES=50,100\nADAPT=false\n"))
    assert settings.gmm_components == 8
    assert settings.mc_sample_counts() == [50, 100]
    assert settings.adapt is False


def test_overrides_beat_file(tmp_path):
    settings = Settings.from_file(_write(tmp_path, "SEED=3\n"), seed=9)
    assert settings.seed == 9
    assert settings.em_config().seed == 9
    assert settings.mlp_config().seed == 9


def test_sub_configs(tmp_path):
    settings = Settings.from_file(_write(tmp_path, "MLP_HIDDEN=32,16\nEM_REG=1e-4\nSUBJECTS=30\n"))
    assert settings.mlp_config().hidden == (32, 16)
    assert settings.em_config().reg == 1e-4
    assert settings.synth_config().subjects == 30
    assert settings.encoder_config().latent_dim == 64


@pytest.mark.parametrize("text, key", [
    ("GMM_COMPONENTS=abc\n", "GMM_COMPONENTS"),
    ("SIGMA_LEVELS=1,-2\n", "SIGMA_LEVELS"),
    ("TASKS=intra,inter_height\n", "TASKS"),
    ("DEMO_DURATION_S=500\n", "DEMO_DURATION_S"),
    ("UNKNOWN_KEY=1\n", "UNKNOWN_KEY"),
])
def test_invalid_values(tmp_path, text, key):
    with pytest.raises(ConfigError) as info:
        Settings.from_file(_write(tmp_path, text))
    assert key in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        Settings.from_file(tmp_path / "absent.env")


def test_log_level_is_normalized():
    assert Settings.from_file(log_level="debug").log_level == "DEBUG"
    with pytest.raises(ConfigError):
        Settings.from_file(log_level="loud")
