"""
Decoding latency as node counts of pruned decoding trees.

One node of the tree is one time step. SC visits the full binary tree
(2N - 1 nodes); SSC stops at Rate-0/Rate-1 nodes and Fast-SSC additionally at
Rep/SPC nodes. Sweeps over n reuse one pass of the reliability recursion and
count every level with a streaming classifier that never builds the tree.
"""

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from polar.channel import BmsChannel, Family, capacity
from polar.codec import NodeKind, Variant, classify
from polar.construction import (PolarCode, ReliabilityTable, bec_reliability, de_bytes,
                                iter_reliability_levels, resolve_method, select_frozen)
from polar.errors import CandidateError, ResourceBudgetError, WindowError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ['family', 'param', 'pe', 'n', 'rate', 'latency_sc', 'latency_ssc', 'latency_fastssc']
LATENCY_COLUMNS = {Variant.SC: 'latency_sc', Variant.SSC: 'latency_ssc',
                   Variant.FASTSSC: 'latency_fastssc'}


# ---------------------------------------------------------------------------
# Trees
# ---------------------------------------------------------------------------

@dataclass
class PrunedTree:
    """Nodes in depth-first, left-first visiting order."""
    n: int
    variant: Variant
    nodes: pd.DataFrame

    def __len__(self):
        return len(self.nodes)


def build_pruned_tree(code: PolarCode, variant=Variant.SSC) -> PrunedTree:
    variant = Variant.parse(variant)
    terminals = variant.terminals
    records: List[Tuple[int, int, str]] = []

    def visit(level: int, offset: int):
        kind = classify(code, level, offset)
        stop = level == 0 or kind in terminals
        records.append((level, offset, kind.value if stop else NodeKind.BRANCH.value))
        if not stop:
            visit(level - 1, 2 * offset)
            visit(level - 1, 2 * offset + 1)

    visit(code.n, 0)
    nodes = pd.DataFrame(records, columns=['level', 'offset', 'kind'])
    return PrunedTree(code.n, variant, nodes)


def latency(tree: PrunedTree) -> int:
    return len(tree.nodes)


def schedule(tree: PrunedTree) -> List[str]:
    tokens = []
    for i, (level, offset) in enumerate(zip(tree.nodes['level'], tree.nodes['offset'])):
        if i == 0:
            tokens.append('channel')
        elif offset % 2 == 0:
            tokens.append(f'f_l {level}')
        else:
            tokens.append(f'f_r {level}')
    return tokens


def format_schedule(tokens: Sequence[str], compact: bool = False) -> str:
    return ' -> '.join(tokens) if compact else '\n'.join(tokens)


# ---------------------------------------------------------------------------
# Streaming counter
# ---------------------------------------------------------------------------

def _count_dtype(size: int):
    if size <= np.iinfo(np.uint8).max:
        return np.uint8
    if size <= np.iinfo(np.uint16).max:
        return np.uint16
    return np.uint32


def info_pyramid(info: np.ndarray) -> List[np.ndarray]:
    """pyramid[l][o] = number of information leaves under node (l, o)."""
    info = np.ascontiguousarray(info, dtype=bool)
    size = info.size
    n = size.bit_length() - 1
    if size != 1 << n:
        raise ValueError(f"Mask length must be a power of two, got {size}")
    pyramid = [info.view(np.uint8)]
    for level in range(1, n + 1):
        below = pyramid[-1]
        dtype = _count_dtype(1 << level)
        pyramid.append(below[0::2].astype(dtype) + below[1::2].astype(dtype))
    return pyramid


def _count_pruned(pyramid: List[np.ndarray], variant: Variant) -> int:
    info = pyramid[0].view(bool)
    n = len(pyramid) - 1
    fast = variant is Variant.FASTSSC
    present = np.zeros(1, dtype=np.int64)
    total = 0
    for level in range(n, -1, -1):
        total += present.size
        if level == 0 or present.size == 0:
            break
        width = 1 << level
        counts = pyramid[level][present].astype(np.int64)
        terminal = (counts == 0) | (counts == width)
        if fast:
            last_info = info[width - 1::width][present]
            first_frozen = ~info[0::width][present]
            terminal |= ((counts == 1) & last_info) | ((counts == width - 1) & first_frozen)
        branches = present[~terminal]
        present = np.empty(2 * branches.size, dtype=np.int64)
        present[0::2] = 2 * branches
        present[1::2] = 2 * branches + 1
    return int(total)


def count_latencies(info: np.ndarray, variants: Sequence = tuple(Variant)) -> Dict[Variant, int]:
    """
    Node counts of the pruned trees for an information mask.

    Information counts per node are built bottom-up once (small integer
    types); each variant then expands the tree top-down one level at a time,
    keeping only the offsets of the nodes actually present.
    """
    variants = [Variant.parse(v) for v in variants]
    pyramid = info_pyramid(info)
    counts = {}
    for variant in variants:
        if variant is Variant.SC:
            counts[variant] = 2 * pyramid[0].size - 1
        else:
            counts[variant] = _count_pruned(pyramid, variant)
    return counts


def count_latency_mask(info: np.ndarray, variant=Variant.SSC) -> int:
    variant = Variant.parse(variant)
    return count_latencies(info, [variant])[variant]


def count_latency_streaming(table: ReliabilityTable, p_e: float, variant=Variant.SSC) -> int:
    info = table.values < p_e / table.size
    return count_latency_mask(info, variant)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass
class LatencyReport:
    family: Family
    param: float
    p_e: float
    rows: pd.DataFrame
    channel_capacity: float = float('nan')
    fitted_slopes: Dict[str, Dict[str, object]] = field(default_factory=dict)
    truncated: bool = False
    truncated_after: Optional[int] = None
    methods: Dict[int, str] = field(default_factory=dict)
    elapsed_s: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        frame = self.rows.copy()
        frame.insert(0, 'pe', self.p_e)
        frame.insert(0, 'param', self.param)
        frame.insert(0, 'family', self.family.value)
        return frame[CSV_COLUMNS]

    def log2_series(self, variant) -> pd.Series:
        column = LATENCY_COLUMNS[Variant.parse(variant)]
        series = self.rows.set_index('n')[column].dropna().astype(float)
        return np.log2(series)

    def capacity_gap(self) -> pd.Series:
        return (self.channel_capacity - self.rows.set_index('n')['rate']).rename('capacity_gap')


def parse_n_range(text: str) -> List[int]:
    """'0..14' -> [0, ..., 14]; '5' -> [5]; '3,5,8' -> [3, 5, 8]."""
    text = str(text).strip()
    if '..' in text:
        lo, hi = (int(part) for part in text.split('..', 1))
        if lo > hi:
            raise ValueError(f"Empty n range {text!r}")
        return list(range(lo, hi + 1))
    return sorted({int(part) for part in text.split(',') if part.strip()})


def feasible_n(channel: BmsChannel, n_max: int, resolution: int = 64, method: str = 'auto',
               ga_threshold_n: int = 22, de_max_n: int = 22,
               budget_bytes: Optional[int] = None) -> int:
    """Largest n <= n_max whose tables fit the caps and the memory budget (-1 if none)."""
    for n in range(n_max, -1, -1):
        chosen = resolve_method(channel, n, method, ga_threshold_n)
        if chosen == 'de':
            if n > de_max_n:
                continue
            if budget_bytes is not None and de_bytes(n, resolution) > budget_bytes:
                continue
        elif budget_bytes is not None and (1 << n) * 8 > budget_bytes:
            continue
        return n
    return -1


def latency_sweeps(channel: BmsChannel, p_es: Sequence[float], n_values: Iterable[int],
                   variants: Sequence = (Variant.SC, Variant.SSC), resolution: int = 64,
                   method: str = 'auto', ga_threshold_n: int = 22, de_max_n: int = 22,
                   budget_bytes: Optional[int] = None, threads: int = 4) -> List[LatencyReport]:
    """One report per p_e, all sharing a single pass over the reliability levels."""
    started = time.perf_counter()
    variants = [Variant.parse(v) for v in variants]
    wanted = sorted(set(int(n) for n in n_values))
    if not wanted or wanted[0] < 0:
        raise ValueError(f"Invalid n values {wanted}")
    for p_e in p_es:
        if not 0.0 < p_e < 1.0:
            raise ValueError(f"Target error probability must lie in (0, 1), got {p_e}")

    top = feasible_n(channel, wanted[-1], resolution, method, ga_threshold_n, de_max_n, budget_bytes)
    truncated = top < wanted[-1]
    if truncated:
        logger.warning("Sweep for %s truncated: n > %d exceeds the resource budget", channel, top)
        if top < 0:
            raise ResourceBudgetError(f"No requested n fits the budget for {channel}")
    keep = [n for n in wanted if n <= top]

    rows = {p_e: {} for p_e in p_es}
    methods: Dict[int, str] = {}
    jobs = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for table in iter_reliability_levels(channel, top, resolution, method, ga_threshold_n,
                                             de_max_n, budget_bytes):
            if table.n not in keep:
                continue
            methods[table.n] = table.method
            for p_e in p_es:
                info = table.values < p_e / table.size
                row = {'n': table.n, 'rate': float(np.count_nonzero(info)) / table.size}
                rows[p_e][table.n] = row
                jobs.append((row, pool.submit(count_latencies, info, variants)))
            logger.info("Level n=%d of %s queued (%s)", table.n, channel, table.method)
        for row, future in jobs:
            for variant, count in future.result().items():
                row[LATENCY_COLUMNS[variant]] = count

    cap = capacity(channel)
    elapsed = time.perf_counter() - started
    reports = []
    for p_e in p_es:
        frame = pd.DataFrame([rows[p_e][n] for n in keep])
        for column in LATENCY_COLUMNS.values():
            if column not in frame:
                frame[column] = pd.NA
            frame[column] = frame[column].astype('Int64')
        frame = frame[['n', 'rate'] + list(LATENCY_COLUMNS.values())]
        reports.append(LatencyReport(channel.family, channel.param, p_e, frame, cap,
                                     truncated=truncated,
                                     truncated_after=top if truncated else None,
                                     methods=dict(methods), elapsed_s=elapsed))
    return reports


def latency_sweep(channel: BmsChannel, p_e: float, n_values: Iterable[int],
                  variants: Sequence = (Variant.SC, Variant.SSC), **kwargs) -> LatencyReport:
    return latency_sweeps(channel, [p_e], n_values, variants, **kwargs)[0]


def fit_slope(report: LatencyReport, variant, window: Tuple[int, int]) -> Tuple[float, float]:
    """Least-squares line through (n, log2 L) for lo <= n <= hi."""
    lo, hi = window
    series = report.log2_series(variant)
    series = series[(series.index >= lo) & (series.index <= hi)]
    if len(series) < 4:
        raise WindowError(f"Window [{lo}, {hi}] holds {len(series)} rows, need at least 4")
    fit = stats.linregress(series.index.to_numpy(dtype=float), series.to_numpy())
    report.fitted_slopes[Variant.parse(variant).value] = {
        'slope': float(fit.slope), 'intercept': float(fit.intercept), 'window': [lo, hi]}
    return float(fit.slope), float(fit.intercept)


def default_window(family: Family, n_max: int, bec_window=(20, 27), start: int = 16) -> Tuple[int, int]:
    if family is Family.BEC:
        return tuple(bec_window)
    return start, n_max


def save_report(report: LatencyReport, csv_path) -> Tuple[Path, Path]:
    """CSV of the rows plus a JSON companion with slopes and metadata."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    report.to_frame().to_csv(csv_path, index=False)
    gaps = report.capacity_gap()
    meta = {
        'family': report.family.value,
        'param': report.param,
        'pe': report.p_e,
        'capacity': report.channel_capacity,
        'fitted_slopes': report.fitted_slopes,
        'capacity_gap': {str(int(n)): float(g) for n, g in gaps.items()},
        'methods': {str(n): m for n, m in report.methods.items()},
        'truncated': report.truncated,
        'truncated_after': report.truncated_after,
        'elapsed_s': round(report.elapsed_s, 3),
    }
    json_path = csv_path.with_suffix('.json')
    with open(json_path, 'w', encoding='utf-8') as f:
        json.dump(meta, f, indent=2)
    return csv_path, json_path


def load_report(csv_path) -> LatencyReport:
    csv_path = Path(csv_path)
    frame = pd.read_csv(csv_path)
    missing = set(CSV_COLUMNS) - set(frame.columns)
    if missing:
        raise ValueError(f"{csv_path}: missing columns {sorted(missing)}")
    if frame.empty:
        raise ValueError(f"{csv_path}: no rows")
    rows = frame[['n', 'rate'] + list(LATENCY_COLUMNS.values())].copy()
    for column in LATENCY_COLUMNS.values():
        rows[column] = rows[column].astype('Int64')
    report = LatencyReport(Family.parse(frame['family'].iloc[0]), float(frame['param'].iloc[0]),
                           float(frame['pe'].iloc[0]), rows.reset_index(drop=True))
    json_path = csv_path.with_suffix('.json')
    if json_path.exists():
        with open(json_path, 'r', encoding='utf-8') as f:
            meta = json.load(f)
        report.channel_capacity = meta.get('capacity', report.channel_capacity)
        report.fitted_slopes = meta.get('fitted_slopes', {})
        report.truncated = meta.get('truncated', False)
        report.truncated_after = meta.get('truncated_after')
        report.methods = {int(n): m for n, m in meta.get('methods', {}).items()}
    return report


# ---------------------------------------------------------------------------
# Scaling exponent side conditions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingCheck:
    sup_ratio: float
    mu: Optional[float]

    @property
    def valid(self) -> bool:
        return self.mu is not None

    def __str__(self):
        if self.valid:
            return f"sup={self.sup_ratio:.12g} mu={self.mu:.6g}"
        return f"sup={self.sup_ratio:.12g} invalid"


def check_scaling_candidate(x, h, family: str = 'bec', y_points: int = 1000,
                            chunk: int = 256, x_points: Optional[int] = None) -> ScalingCheck:
    """
    Grid supremum of the polarization ratio of a candidate h.

    BEC:     (h(x^2) + h(2x - x^2)) / (2 h(x))
    general: the same with the second term maximised over
             y in [x sqrt(2 - x^2), 2x - x^2] (grid plus both ends).
    h is evaluated between samples by linear interpolation. The ratio is
    taken at the interior samples, or at the interior of a uniform grid of
    `x_points` points when one is given.
    """
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    if x.ndim != 1 or x.shape != h.shape or x.size < 3:
        raise CandidateError("Samples must be two 1-D arrays of equal length (at least 3 points)")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(h)):
        raise CandidateError("Samples contain non-finite values")
    if np.any(np.diff(x) <= 0) or x[0] != 0.0 or x[-1] != 1.0:
        raise CandidateError("x must increase strictly from 0 to 1")
    # h(1) is allowed to be positive so that h(x) = x reports as invalid
    if abs(h[0]) > 1e-12 or h[-1] < -1e-12:
        raise CandidateError("h must vanish at 0 and be non-negative at 1")
    if np.any(h[1:-1] <= 0):
        raise CandidateError("h must be positive on the interior grid points")

    family = str(family).lower()
    if family not in ('bec', 'general'):
        raise ValueError(f"Unknown candidate family {family!r} (expected general or bec)")

    if x_points is None:
        inner = x[1:-1]
        denominator = 2.0 * h[1:-1]
    else:
        if x_points < 3:
            raise ValueError(f"x_points must be >= 3, got {x_points}")
        inner = np.linspace(0.0, 1.0, x_points)[1:-1]
        denominator = 2.0 * np.interp(inner, x, h)
        if np.any(denominator <= 0):
            raise CandidateError("h must be positive inside (0, 1) on the evaluation grid")
    first = np.interp(inner * inner, x, h)
    upper = 2.0 * inner - inner * inner
    if family == 'bec':
        ratios = (first + np.interp(upper, x, h)) / denominator
    else:
        lower = inner * np.sqrt(2.0 - inner * inner)
        t = np.linspace(0.0, 1.0, max(2, y_points))
        ratios = np.empty(inner.size)
        for start in range(0, inner.size, chunk):
            sl = slice(start, start + chunk)
            ys = lower[sl, None] + t[None, :] * (upper[sl] - lower[sl])[:, None]
            best = np.interp(ys, x, h).max(axis=1)
            ratios[sl] = (first[sl] + best) / denominator[sl]

    sup = float(ratios.max())
    if sup >= 1.0 - 1e-12:
        return ScalingCheck(sup, None)
    return ScalingCheck(sup, -1.0 / math.log2(sup))


def pruning_rounds(mu: float, rounds: int) -> Tuple[List[float], float]:
    """Round lengths delta_k ~ mu^(1-k), normalised to sum 1, and the exponent they predict."""
    if mu <= 1.0:
        raise ValueError(f"mu must exceed 1, got {mu}")
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    weights = np.power(mu, -np.arange(rounds, dtype=float))
    deltas = weights / weights.sum()
    exponent = 1.0 / float(np.sum(np.power(mu, -np.arange(rounds + 1, dtype=float))))
    return deltas.tolist(), exponent


# ---------------------------------------------------------------------------
# Polarization checks
# ---------------------------------------------------------------------------

def unpolarized_fraction(table: ReliabilityTable, nu: float) -> float:
    """Fraction of entries with 2^(-nu n) <= Z <= 1 - 2^(-nu n)."""
    if nu <= 1.0:
        raise ValueError(f"nu must exceed 1, got {nu}")
    if table.n == 0:
        # the interval is empty at n = 0; count the interior values instead
        return float(np.count_nonzero((table.values > 0.0) & (table.values < 1.0))) / table.size
    bound = 2.0 ** (-nu * table.n)
    low = table.values >= bound
    if table.exact and table.channel is not None and table.channel.family is Family.BEC:
        # 1 - Z_i(eps) = Z_{N-1-i}(1 - eps), exact where 1 - Z would round away
        complement = bec_reliability(1.0 - table.channel.param, table.n).values[::-1]
        high = complement >= bound
    else:
        high = table.values <= 1.0 - bound
    return float(np.count_nonzero(low & high)) / table.size


def polarized_rate_check(n: int, p_e: float) -> Dict[str, float]:
    """Rates of the BEC(N^-3) and BEC(1 - N^-3) codes, and max Z of the first against N/(N^3 - 1)."""
    size = 1 << n
    eps = float(size) ** -3
    good = bec_reliability(eps, n)
    bad = bec_reliability(1.0 - eps, n)
    return {
        'n': n,
        'rate_good': select_frozen(good, p_e).rate,
        'rate_bad': select_frozen(bad, p_e).rate,
        'max_z_good': float(good.values.max()),
        'max_z_bound': size / (float(size) ** 3 - 1.0),
    }
