"""
Monte-Carlo transmission harness.

Each trial owns a random stream derived from (seed, trial index) through a
counter-based generator, so the outcome of a run does not depend on how
trials are chunked or how many worker threads decode them.
"""

import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from polar.channel import BmsChannel, Family
from polar.codec import F_EXACT, Variant, decode, encode
from polar.construction import PolarCode

logger = logging.getLogger(__name__)

DEFAULT_SATURATION = 40.0


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(trial,))))


def transmit(codeword, channel: BmsChannel, rng: np.random.Generator,
             saturation: float = DEFAULT_SATURATION) -> np.ndarray:
    """Channel LLRs (natural log, positive favours 0) for one codeword or a batch."""
    x = np.asarray(codeword, dtype=np.uint8)
    signs = 1.0 - 2.0 * x
    p = channel.param
    if channel.family is Family.BEC:
        erased = rng.random(x.shape) < p
        return np.where(erased, 0.0, saturation * signs)
    if channel.family is Family.BSC:
        flipped = rng.random(x.shape) < p
        magnitude = saturation if p == 0.0 else math.log((1.0 - p) / p)
        return magnitude * np.where(flipped, -signs, signs)
    y = signs + p * rng.standard_normal(x.shape)
    return 2.0 * y / (p * p)


@dataclass(frozen=True)
class TrialConfig:
    code: PolarCode
    channel: BmsChannel
    trials: int
    seed: int = 42
    variants: Tuple[Variant, ...] = (Variant.SC, Variant.SSC, Variant.FASTSSC)
    f_rule: str = F_EXACT
    saturation: float = DEFAULT_SATURATION
    threads: int = 4
    chunk_size: int = 256

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")
        object.__setattr__(self, 'variants', tuple(Variant.parse(v) for v in self.variants))
        if not self.variants:
            raise ValueError("At least one decoder variant is required")

    def to_dict(self) -> dict:
        return {
            'n': self.code.n,
            'pe': self.code.p_e,
            'rate': self.code.rate,
            'channel': {'family': self.channel.family.value, 'param': self.channel.param},
            'trials': self.trials,
            'seed': self.seed,
            'variants': [v.value for v in self.variants],
            'f_left': self.f_rule,
            'saturation': self.saturation,
        }


@dataclass
class FerResult:
    config: TrialConfig
    errors: Dict[str, int]
    agreements: Dict[str, int]
    wall_clock_s: float = 0.0
    union_bound: Optional[float] = None

    @property
    def trials(self) -> int:
        return self.config.trials

    def fer(self, variant) -> float:
        return self.errors[Variant.parse(variant).value] / self.trials

    def interval(self, variant, confidence: float = 0.95) -> Tuple[float, float]:
        """Wilson score interval for the frame error rate."""
        ci = stats.binomtest(self.errors[Variant.parse(variant).value], self.trials).proportion_ci(
            confidence_level=confidence, method='wilson')
        return float(max(0.0, ci.low)), float(min(1.0, ci.high))

    def to_frame(self) -> pd.DataFrame:
        records = []
        for variant in self.config.variants:
            low, high = self.interval(variant)
            records.append({'variant': variant.value, 'errors': self.errors[variant.value],
                            'trials': self.trials, 'fer': self.fer(variant),
                            'ci_low': low, 'ci_high': high})
        return pd.DataFrame(records)

    def to_dict(self) -> dict:
        return {
            'config': self.config.to_dict(),
            'results': self.to_frame().to_dict(orient='records'),
            'agreement': dict(self.agreements),
            'union_bound': self.union_bound,
            'wall_clock_s': round(self.wall_clock_s, 3),
        }


def save_result(result: FerResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(result.to_dict(), f, indent=2)
    return path


def _pair_key(a: Variant, b: Variant) -> str:
    return f"{a.value}-{b.value}"


def _run_chunk(config: TrialConfig, first: int, last: int):
    code = config.code
    info_bits = np.empty((last - first, code.info_count), dtype=np.uint8)
    llr = np.empty((last - first, code.size))
    for row, trial in enumerate(range(first, last)):
        rng = trial_rng(config.seed, trial)
        info_bits[row] = rng.integers(0, 2, size=code.info_count, dtype=np.uint8)
        llr[row] = transmit(encode(info_bits[row], code), config.channel, rng, config.saturation)

    decoded = {}
    errors = {}
    for variant in config.variants:
        u_hat, _ = decode(llr, code, variant, config.f_rule)
        decoded[variant] = u_hat[:, code.info_positions]
        errors[variant.value] = int(np.count_nonzero(np.any(decoded[variant] != info_bits, axis=1)))

    agreements = {}
    for a, b in itertools.combinations(config.variants, 2):
        agreements[_pair_key(a, b)] = int(np.count_nonzero(np.all(decoded[a] == decoded[b], axis=1)))
    return errors, agreements


def run_trials(config: TrialConfig) -> FerResult:
    started = time.perf_counter()
    bounds: List[Tuple[int, int]] = [
        (start, min(config.trials, start + config.chunk_size))
        for start in range(0, config.trials, config.chunk_size)
    ]
    errors = {v.value: 0 for v in config.variants}
    agreements = {_pair_key(a, b): 0 for a, b in itertools.combinations(config.variants, 2)}

    with ThreadPoolExecutor(max_workers=max(1, config.threads)) as pool:
        for done, (chunk_errors, chunk_agree) in enumerate(
                pool.map(lambda b: _run_chunk(config, *b), bounds), start=1):
            for key, count in chunk_errors.items():
                errors[key] += count
            for key, count in chunk_agree.items():
                agreements[key] += count
            if done % 50 == 0:
                logger.info("%d/%d chunks decoded", done, len(bounds))

    result = FerResult(config, errors, agreements, time.perf_counter() - started,
                       config.code.union_bound)
    logger.info("Simulation finished: %s", ', '.join(f"{k}={v}" for k, v in errors.items()))
    return result
