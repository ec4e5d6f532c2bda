"""
Reliability tables and frozen-set selection.

For the BEC the Bhattacharyya recursion is closed-form and evaluated level by
level in one array of 2^n doubles. BSC and BAWGNC go through quantized density
evolution (conservative upper bounds); past `ga_threshold_n` the BAWGNC
falls back to the Gaussian approximation of the mean LLR.

Index convention: entry i (0-based) of a level-n table belongs to the
synthetic channel whose transform sequence is the binary expansion of i, most
significant bit first (0 = check node, 1 = variable node).
"""

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import numpy as np

from polar.channel import (BmsChannel, Family, bhattacharyya_batch, check_node_batch,
                           merge_batch, quantize, variable_node_batch)
from polar.errors import (ResourceBudgetError, TableChecksumError, TableFormatError,
                          TableTruncatedError, TableVersionError)

logger = logging.getLogger(__name__)

METHOD_BEC = 'bec'
METHOD_DE = 'de'
METHOD_GA = 'ga'
METHODS = (METHOD_BEC, METHOD_DE, METHOD_GA)

# rows of 2^n doubles handled per vectorised slice
_CHUNK = 1 << 20
# elements of one temporary (rows x width^2) array in density evolution
_DE_TEMP_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class ReliabilityTable:
    n: int
    values: np.ndarray
    exact: bool
    channel: Optional[BmsChannel] = None
    method: str = METHOD_BEC
    resolution: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (1 << self.n,):
            raise ValueError(f"Expected {1 << self.n} values for n={self.n}, got {values.shape}")
        object.__setattr__(self, 'values', values)

    @property
    def size(self) -> int:
        return 1 << self.n


@dataclass(frozen=True)
class PolarCode:
    n: int
    frozen: np.ndarray
    p_e: Optional[float] = None
    channel: Optional[BmsChannel] = None
    method: str = ''
    resolution: int = 0
    union_bound: Optional[float] = None

    def __post_init__(self):
        frozen = np.asarray(self.frozen, dtype=bool)
        if frozen.shape != (1 << self.n,):
            raise ValueError(f"Frozen mask must have length {1 << self.n}, got {frozen.shape}")
        frozen.setflags(write=False)
        object.__setattr__(self, 'frozen', frozen)

    @property
    def size(self) -> int:
        return 1 << self.n

    @property
    def info_positions(self) -> np.ndarray:
        return np.flatnonzero(~self.frozen)

    @property
    def info_count(self) -> int:
        return int(self.size - np.count_nonzero(self.frozen))

    @property
    def rate(self) -> float:
        return self.info_count / self.size

    @cached_property
    def info_prefix(self) -> np.ndarray:
        """info_prefix[j] = number of information positions among the first j."""
        return np.concatenate(([0], np.cumsum(~self.frozen, dtype=np.int64)))

    @classmethod
    def from_frozen_positions(cls, n: int, positions: Sequence[int]) -> 'PolarCode':
        """Code from 1-indexed frozen positions."""
        frozen = np.zeros(1 << n, dtype=bool)
        for pos in positions:
            if not 1 <= pos <= 1 << n:
                raise ValueError(f"Frozen position {pos} outside 1..{1 << n}")
            frozen[pos - 1] = True
        return cls(n=n, frozen=frozen, method='manual')

    def to_dict(self) -> dict:
        return {
            'n': self.n,
            'pe': self.p_e,
            'channel': None if self.channel is None else {
                'family': self.channel.family.value, 'param': self.channel.param},
            'method': self.method,
            'resolution': self.resolution,
            'frozen': [int(i) + 1 for i in np.flatnonzero(self.frozen)],
            'info': [int(i) + 1 for i in self.info_positions],
            'rate': self.rate,
            'union_bound': self.union_bound,
        }


def check_budget(n: int, budget_entries: Optional[int], per_entry: int = 1):
    if budget_entries is not None and (1 << n) * per_entry > budget_entries:
        raise ResourceBudgetError(
            f"n={n} needs {(1 << n) * per_entry} table entries, budget is {budget_entries}")


# ---------------------------------------------------------------------------
# BEC: closed-form recursion
# ---------------------------------------------------------------------------

def _expand_in_place(values: np.ndarray, size: int, worse, better):
    """Replace values[:size] by its 2*size children, walking from the top."""
    for end in range(size, 0, -_CHUNK):
        start = max(0, end - _CHUNK)
        z = values[start:end].copy()
        values[2 * start:2 * end:2] = worse(z)
        values[2 * start + 1:2 * end:2] = better(z)


def _bec_levels(erasure: float, n_max: int) -> Iterator[np.ndarray]:
    values = np.empty(1 << n_max, dtype=float)
    values[0] = erasure
    yield values[:1]
    for level in range(n_max):
        _expand_in_place(values, 1 << level, lambda z: 2.0 * z - z * z, lambda z: z * z)
        yield values[:2 << level]


def bec_reliability(erasure: float, n: int,
                    budget_entries: Optional[int] = None) -> ReliabilityTable:
    """Exact Bhattacharyya values of the 2^n synthetic channels of a BEC."""
    channel = BmsChannel(Family.BEC, erasure)
    check_budget(n, budget_entries)
    values = None
    for values in _bec_levels(channel.param, n):
        pass
    return ReliabilityTable(n, values, True, channel, METHOD_BEC, 0)


# ---------------------------------------------------------------------------
# Quantized density evolution
# ---------------------------------------------------------------------------

def resolution_ladder(resolution: int) -> List[int]:
    """Powers of two below `resolution`, then `resolution` itself."""
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    ladder = []
    rung = 2
    while rung < resolution:
        ladder.append(rung)
        rung *= 2
    ladder.append(resolution)
    return ladder


def de_bytes(n: int, resolution: int) -> int:
    """Working set of one density-evolution level: parents plus children on every rung."""
    return 3 * (1 << n) * sum(resolution_ladder(resolution)) * 2 * 8


def _de_step(llr, prob, perfect, resolution: int):
    parents, width = llr.shape
    children = 2 * parents
    out_llr = np.zeros((children, resolution))
    out_prob = np.zeros((children, resolution))
    out_perfect = np.zeros(children)

    chunk = max(1, _DE_TEMP_ELEMENTS // max(1, width * width))
    for start in range(0, parents, chunk):
        end = min(parents, start + chunk)
        rows = slice(start, end)
        for branch, transform in ((0, check_node_batch), (1, variable_node_batch)):
            t_llr, t_prob, t_perfect = transform(llr[rows], prob[rows], perfect[rows])
            m_llr, m_prob = merge_batch(t_llr, t_prob, resolution)
            target = slice(2 * start + branch, 2 * end + branch, 2)
            out_llr[target, :m_llr.shape[1]] = m_llr
            out_prob[target, :m_prob.shape[1]] = m_prob
            out_perfect[target] = t_perfect
    return out_llr, out_prob, out_perfect


def _de_start(channel: BmsChannel, resolution: int):
    q = quantize(channel, resolution)
    llr = np.zeros((1, max(1, len(q.llr))))
    prob = np.zeros_like(llr)
    llr[0, :len(q.llr)] = q.llr
    prob[0, :len(q.prob)] = q.prob
    return resolution, llr, prob, np.array([q.perfect])


def _tightest(states) -> np.ndarray:
    bounds = [bhattacharyya_batch(llr, prob) for _, llr, prob, _ in states]
    return np.clip(np.minimum.reduce(bounds), 0.0, 1.0)


def _de_levels(channel: BmsChannel, n_max: int, resolution: int) -> Iterator[np.ndarray]:
    """
    Every rung of the resolution ladder evolves on its own; a level yields the
    elementwise minimum of the rungs, so a finer resolution never loosens a
    bound of a coarser one on the same ladder.
    """
    states = [_de_start(channel, rung) for rung in resolution_ladder(resolution)]
    yield _tightest(states)
    for level in range(n_max):
        states = [(rung, *_de_step(llr, prob, perfect, rung)) for rung, llr, prob, perfect in states]
        logger.debug("Density evolution level %d done (%d channels)", level + 1, 2 << level)
        yield _tightest(states)


def de_reliability(channel: BmsChannel, n: int, resolution: int = 64,
                   budget_bytes: Optional[int] = None) -> ReliabilityTable:
    """Upper bounds on the Bhattacharyya values by degrading density evolution."""
    if channel.family is Family.BEC:
        return bec_reliability(channel.param, n)
    if budget_bytes is not None and de_bytes(n, resolution) > budget_bytes:
        raise ResourceBudgetError(
            f"Density evolution at n={n}, resolution={resolution} needs "
            f"{de_bytes(n, resolution) / 2**30:.2f} GiB, budget is {budget_bytes / 2**30:.2f} GiB")
    values = None
    for values in _de_levels(channel, n, resolution):
        pass
    return ReliabilityTable(n, values, False, channel, METHOD_DE, resolution)


# ---------------------------------------------------------------------------
# Gaussian approximation (BAWGNC)
# ---------------------------------------------------------------------------

_PHI_SPLIT = 10.0
_PHI_A, _PHI_B, _PHI_C = 0.4527, 0.86, 0.0218


def log_phi(x):
    """ln of the GA function phi(x), piecewise (Chung) form."""
    x = np.asarray(x, dtype=float)
    small = _PHI_C - _PHI_A * np.power(np.maximum(x, 0.0), _PHI_B)
    safe = np.maximum(x, _PHI_SPLIT)
    large = 0.5 * np.log(np.pi / safe) - safe / 4.0 + np.log1p(-10.0 / (7.0 * safe))
    return np.minimum(np.where(x < _PHI_SPLIT, small, large), 0.0)


def inverse_log_phi(t):
    """x >= 0 with ln phi(x) = t, for t <= 0."""
    t = np.minimum(np.asarray(t, dtype=float), 0.0)
    split = float(log_phi(_PHI_SPLIT))
    small = np.power(np.maximum(_PHI_C - t, 0.0) / _PHI_A, 1.0 / _PHI_B)
    x = np.maximum(-4.0 * t, _PHI_SPLIT)
    for _ in range(50):
        g = log_phi(x) - t
        slope = -0.5 / x - 0.25 + (10.0 / (7.0 * x * x)) / (1.0 - 10.0 / (7.0 * x))
        step = g / slope
        x = np.maximum(x - step, _PHI_SPLIT)
        if np.all(np.abs(step) <= 1e-12 * x):
            break
    return np.where(t >= split, small, x)


def _ga_levels(sigma: float, n_max: int) -> Iterator[np.ndarray]:
    means = np.empty(1 << n_max, dtype=float)
    means[0] = 2.0 / (sigma * sigma)
    yield np.exp(-means[:1] / 4.0)

    def worse(m):
        lp = log_phi(m)
        # 1 - (1 - phi)^2 = phi (2 - phi)
        return inverse_log_phi(lp + np.log(2.0 - np.exp(lp)))

    for level in range(n_max):
        _expand_in_place(means, 1 << level, worse, lambda m: 2.0 * m)
        yield np.exp(-means[:2 << level] / 4.0)


def ga_reliability(channel: BmsChannel, n: int,
                   budget_entries: Optional[int] = None) -> ReliabilityTable:
    """Gaussian-approximation estimates Z_i = exp(-m_i/4) for a BAWGNC."""
    if channel.family is not Family.BAWGNC:
        raise ValueError(f"Gaussian approximation applies to the BAWGNC only, got {channel}")
    check_budget(n, budget_entries)
    values = None
    for values in _ga_levels(channel.param, n):
        pass
    return ReliabilityTable(n, values, False, channel, METHOD_GA, 0)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def resolve_method(channel: BmsChannel, n: int, method: str = 'auto',
                   ga_threshold_n: int = 22) -> str:
    if method != 'auto':
        if method not in METHODS:
            raise ValueError(f"Unknown construction method {method!r}")
        if method == METHOD_BEC and channel.family is not Family.BEC:
            raise ValueError(f"Closed-form recursion applies to the BEC only, got {channel}")
        return method
    if channel.family is Family.BEC:
        return METHOD_BEC
    if channel.family is Family.BAWGNC and n > ga_threshold_n:
        return METHOD_GA
    return METHOD_DE


def iter_reliability_levels(channel: BmsChannel, n_max: int, resolution: int = 64,
                            method: str = 'auto', ga_threshold_n: int = 22,
                            de_max_n: int = 22,
                            budget_bytes: Optional[int] = None) -> Iterator[ReliabilityTable]:
    """
    Tables for n = 0..n_max from a single pass of the recursion.

    The BEC and GA paths hand out views into one working array, so a table is
    only valid until the iterator advances; copy what must outlive it.
    """
    budget_entries = None if budget_bytes is None else budget_bytes // 8
    top_method = resolve_method(channel, n_max, method, ga_threshold_n)

    if top_method == METHOD_BEC:
        check_budget(n_max, budget_entries)
        for n, values in enumerate(_bec_levels(channel.param, n_max)):
            yield ReliabilityTable(n, values, True, channel, METHOD_BEC, 0)
        return

    if method == METHOD_GA:
        de_top = -1
    elif top_method == METHOD_DE:
        de_top = n_max
        if de_top > de_max_n:
            raise ResourceBudgetError(f"Density evolution is capped at n={de_max_n}, asked for n={de_top}")
        if budget_bytes is not None and de_bytes(de_top, resolution) > budget_bytes:
            raise ResourceBudgetError(
                f"Density evolution at n={de_top}, resolution={resolution} exceeds the memory budget")
    else:
        # GA finishes the sweep, so DE only runs as far as its cap and the budget allow
        de_top = min(n_max, ga_threshold_n, de_max_n)
        while de_top >= 0 and budget_bytes is not None and de_bytes(de_top, resolution) > budget_bytes:
            de_top -= 1
        if de_top < min(n_max, ga_threshold_n):
            logger.warning("%s: density evolution stops at n=%d, Gaussian approximation from n=%d",
                           channel, de_top, de_top + 1)
    if de_top >= 0:
        for n, values in enumerate(_de_levels(channel, de_top, resolution)):
            logger.info("Table %s n=%d (density evolution, %d levels)", channel, n, resolution)
            yield ReliabilityTable(n, values, False, channel, METHOD_DE, resolution)

    if n_max > de_top:
        check_budget(n_max, budget_entries)
        for n, values in enumerate(_ga_levels(channel.param, n_max)):
            if n > de_top:
                yield ReliabilityTable(n, values, False, channel, METHOD_GA, 0)


def reliability(channel: BmsChannel, n: int, resolution: int = 64, method: str = 'auto',
                ga_threshold_n: int = 22, de_max_n: int = 22,
                budget_bytes: Optional[int] = None) -> ReliabilityTable:
    """Reliability table for one (channel, n) with the method picked by family and size."""
    chosen = resolve_method(channel, n, method, ga_threshold_n)
    budget_entries = None if budget_bytes is None else budget_bytes // 8
    if chosen == METHOD_BEC:
        return bec_reliability(channel.param, n, budget_entries)
    if chosen == METHOD_GA:
        return ga_reliability(channel, n, budget_entries)
    if n > de_max_n:
        raise ResourceBudgetError(f"Density evolution is capped at n={de_max_n}, asked for n={n}")
    return de_reliability(channel, n, resolution, budget_bytes)


def select_frozen(table: ReliabilityTable, p_e: float) -> PolarCode:
    """Index i carries information iff its value is strictly below p_e / 2^n."""
    if not 0.0 < p_e < 1.0:
        raise ValueError(f"Target error probability must lie in (0, 1), got {p_e}")
    info = table.values < p_e / table.size
    union_bound = float(np.sum(table.values[info]))
    return PolarCode(n=table.n, frozen=~info, p_e=p_e, channel=table.channel,
                     method=table.method, resolution=table.resolution,
                     union_bound=union_bound)


# ---------------------------------------------------------------------------
# Cache files
# ---------------------------------------------------------------------------

MAGIC = b'PLRT'
FORMAT_VERSION = 1
_HEADER = struct.Struct('<4sHBdBBI')
_CHECKSUM = struct.Struct('<Q')
_FAMILY_CODES = {Family.BEC: 0, Family.BSC: 1, Family.BAWGNC: 2}
_METHOD_CODES = {METHOD_BEC: 0, METHOD_DE: 1, METHOD_GA: 2}
_MAX_N = 40


def _checksum(payload: bytes) -> int:
    return _CHECKSUM.unpack(hashlib.blake2b(payload, digest_size=8).digest())[0]


def save_table(table: ReliabilityTable, path) -> Path:
    if table.channel is None:
        raise ValueError("Only tables built from a channel can be saved")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, _FAMILY_CODES[table.channel.family],
                          table.channel.param, table.n, _METHOD_CODES[table.method],
                          table.resolution)
    payload = header + np.ascontiguousarray(table.values, dtype='<f8').tobytes()
    with open(path, 'wb') as f:
        f.write(payload)
        f.write(_CHECKSUM.pack(_checksum(payload)))
    return path


def load_table(path) -> ReliabilityTable:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TableTruncatedError(f"{path}: {len(data)} bytes, shorter than the header")
    magic, version, family_code, param, n, method_code, resolution = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TableFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise TableVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    families = {code: fam for fam, code in _FAMILY_CODES.items()}
    methods = {code: name for name, code in _METHOD_CODES.items()}
    if family_code not in families or method_code not in methods or n > _MAX_N:
        raise TableFormatError(f"{path}: unreadable header fields")

    expected = _HEADER.size + 8 * (1 << n) + _CHECKSUM.size
    if len(data) != expected:
        raise TableTruncatedError(f"{path}: {len(data)} bytes, expected {expected} for n={n}")
    payload = data[:-_CHECKSUM.size]
    (stored,) = _CHECKSUM.unpack(data[-_CHECKSUM.size:])
    if stored != _checksum(payload):
        raise TableChecksumError(f"{path}: checksum mismatch")

    values = np.frombuffer(payload, dtype='<f8', offset=_HEADER.size).astype(float)
    method = methods[method_code]
    channel = BmsChannel(families[family_code], param)
    return ReliabilityTable(n, values, method == METHOD_BEC, channel, method, resolution)


@dataclass
class TableCache:
    """Reliability tables on disk, keyed by channel, n, method and resolution."""
    cache_dir: Path
    enabled: bool = True
    hits: int = field(default=0, init=False)

    def path_for(self, channel: BmsChannel, n: int, method: str, resolution: int) -> Path:
        return (Path(self.cache_dir)
                / f"{channel.family.value}_{channel.param!r}_n{n}_{method}_r{resolution}.plrt")

    def get(self, channel: BmsChannel, n: int, method: str, resolution: int) -> Optional[ReliabilityTable]:
        if not self.enabled:
            return None
        path = self.path_for(channel, n, method, resolution)
        if not path.exists():
            return None
        try:
            table = load_table(path)
        except TableFormatError as e:
            logger.warning("Ignoring cached table: %s", e)
            return None
        self.hits += 1
        return table

    def put(self, table: ReliabilityTable) -> Optional[Path]:
        if not self.enabled:
            return None
        return save_table(table, self.path_for(table.channel, table.n, table.method, table.resolution))

    def load_or_build(self, channel: BmsChannel, n: int, resolution: int = 64,
                      method: str = 'auto', **kwargs) -> ReliabilityTable:
        chosen = resolve_method(channel, n, method, kwargs.get('ga_threshold_n', 22))
        key_resolution = resolution if chosen == METHOD_DE else 0
        table = self.get(channel, n, chosen, key_resolution)
        if table is None:
            table = reliability(channel, n, resolution, chosen, **kwargs)
            self.put(table)
        return table
