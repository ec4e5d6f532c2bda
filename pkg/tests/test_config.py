from pathlib import Path

import yaml

from polar.config import CACHE_ENV_VAR, DEFAULT_CONFIG_PATH, PROJECT_ROOT, load_configuration


def test_shipped_configuration(monkeypatch):
    monkeypatch.delenv(CACHE_ENV_VAR, raising=False)
    settings = load_configuration(str(DEFAULT_CONFIG_PATH))
    assert settings.resolution == 64
    assert settings.de_max_n == 22
    assert settings.bec_window == (20, 27)
    assert settings.cache_path == PROJECT_ROOT / 'data' / 'cache'
    assert settings.memory_budget_bytes == int(1.5 * 2**30)
    assert {'bec_pe', 'bsc_pe', 'fastssc_bec'} <= set(settings.presets)
    assert settings.presets['bsc_pe']['resolution'] == 16


def test_environment_moves_the_cache(tmp_path):
    # the autouse fixture points the cache into tmp_path
    settings = load_configuration(str(DEFAULT_CONFIG_PATH))
    assert settings.cache_path == tmp_path / 'cache'


def test_missing_file_falls_back_to_defaults(tmp_path, monkeypatch):
    monkeypatch.delenv(CACHE_ENV_VAR, raising=False)
    settings = load_configuration(str(tmp_path / 'absent.yaml'))
    assert settings.trials == 10000
    assert settings.f_left == 'exact'
    assert settings.presets == {}


def test_partial_file(tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text(yaml.safe_dump({
        'paths': {'reports': str(tmp_path / 'out')},
        'decoder': {'f_left': 'min-sum'},
        'simulation': {'seed': 7},
    }), encoding='utf-8')
    settings = load_configuration(str(path))
    assert settings.reports_path == Path(tmp_path / 'out')
    assert settings.f_left == 'min-sum'
    assert settings.seed == 7
    assert settings.saturation == 40.0


def test_empty_file(tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text('')
    assert load_configuration(str(path)).resolution == 64
