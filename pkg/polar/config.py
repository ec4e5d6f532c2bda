"""
Chargement de la configuration (config/config.yaml + variables d'environnement).

The YAML file holds every tunable default; `.env` files are read through
python-dotenv so that PLAB_CACHE_DIR can relocate the reliability cache.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml
from dotenv import load_dotenv

PROJECT_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_CONFIG_PATH = PROJECT_ROOT / 'config' / 'config.yaml'
CACHE_ENV_VAR = 'PLAB_CACHE_DIR'


@dataclass(frozen=True)
class Settings:
    reports_path: Path = PROJECT_ROOT / 'reports'
    cache_path: Path = PROJECT_ROOT / 'data' / 'cache'
    resolution: int = 64
    memory_budget_gib: float = 1.5
    de_max_n: int = 22
    ga_threshold_n: int = 22
    cache_tables: bool = True
    f_left: str = 'exact'
    saturation: float = 40.0
    bec_window: Tuple[int, int] = (20, 27)
    default_window_start: int = 16
    latency_threads: int = 4
    seed: int = 42
    trials: int = 10000
    sim_threads: int = 4
    chunk_size: int = 256
    x_points: int = 10000
    y_points: int = 1000
    log_level: str = 'INFO'
    presets: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    @property
    def memory_budget_bytes(self) -> int:
        return int(self.memory_budget_gib * 2**30)


def _resolve(path_value: str) -> Path:
    path = Path(path_value)
    return path if path.is_absolute() else PROJECT_ROOT / path


def load_configuration(config_path: Optional[str] = None) -> Settings:
    """Charge la configuration depuis le fichier YAML"""
    load_dotenv()

    path = Path(config_path) if config_path else DEFAULT_CONFIG_PATH
    config: Dict[str, Any] = {}
    if path.exists():
        with open(path, 'r', encoding='utf-8') as f:
            config = yaml.safe_load(f) or {}

    defaults = Settings()
    paths = config.get('paths', {})
    construction = config.get('construction', {})
    decoder = config.get('decoder', {})
    latency = config.get('latency', {})
    simulation = config.get('simulation', {})
    scaling = config.get('scaling_check', {})

    cache_path = os.getenv(CACHE_ENV_VAR) or paths.get('cache')

    return Settings(
        reports_path=_resolve(paths['reports']) if 'reports' in paths else defaults.reports_path,
        cache_path=_resolve(cache_path) if cache_path else defaults.cache_path,
        resolution=int(construction.get('resolution', defaults.resolution)),
        memory_budget_gib=float(construction.get('memory_budget_gib', defaults.memory_budget_gib)),
        de_max_n=int(construction.get('de_max_n', defaults.de_max_n)),
        ga_threshold_n=int(construction.get('ga_threshold_n', defaults.ga_threshold_n)),
        cache_tables=bool(construction.get('cache_tables', defaults.cache_tables)),
        f_left=str(decoder.get('f_left', defaults.f_left)),
        saturation=float(decoder.get('saturation', defaults.saturation)),
        bec_window=tuple(latency.get('bec_window', defaults.bec_window)),
        default_window_start=int(latency.get('default_window_start', defaults.default_window_start)),
        latency_threads=int(latency.get('threads', defaults.latency_threads)),
        seed=int(simulation.get('seed', defaults.seed)),
        trials=int(simulation.get('trials', defaults.trials)),
        sim_threads=int(simulation.get('threads', defaults.sim_threads)),
        chunk_size=int(simulation.get('chunk_size', defaults.chunk_size)),
        x_points=int(scaling.get('x_points', defaults.x_points)),
        y_points=int(scaling.get('y_points', defaults.y_points)),
        log_level=str(config.get('logging', {}).get('level', defaults.log_level)),
        presets=dict(config.get('presets', {}) or {}),
    )
