"""
Binary-input memoryless symmetric (BMS) channels.

A channel is either described parametrically (`BmsChannel`) or by the
distribution of its |LLR| under the all-zero input (`QuantizedBms`). The
second form is what density evolution pushes through the polar transforms;
every alphabet reduction merges output symbols, which can only degrade the
channel, so the Bhattacharyya values computed from it are upper bounds.

The batch helpers at the bottom work on whole levels of synthetic channels at
once: arrays of shape (channels, symbols), zero-probability padding allowed.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy import integrate, optimize, special, stats

logger = logging.getLogger(__name__)

# Stand-in for |LLR| = +inf in listings; arithmetic keeps that mass apart.
INFINITE_LLR = math.inf
DEFAULT_RESOLUTION = 64


class Family(str, Enum):
    BEC = 'bec'
    BSC = 'bsc'
    BAWGNC = 'bawgnc'

    @classmethod
    def parse(cls, value) -> 'Family':
        if isinstance(value, Family):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"Unknown channel family: {value!r} (expected bec, bsc or bawgnc)") from None


@dataclass(frozen=True)
class BmsChannel:
    """BEC erasure probability, BSC crossover probability or BAWGNC noise std."""
    family: Family
    param: float

    def __post_init__(self):
        object.__setattr__(self, 'family', Family.parse(self.family))
        object.__setattr__(self, 'param', float(self.param))
        p = self.param
        if self.family is Family.BEC and not 0.0 <= p <= 1.0:
            raise ValueError(f"BEC erasure probability must lie in [0, 1], got {p}")
        if self.family is Family.BSC and not 0.0 <= p <= 0.5:
            raise ValueError(f"BSC crossover probability must lie in [0, 1/2], got {p}")
        if self.family is Family.BAWGNC and not (p > 0.0 and math.isfinite(p)):
            raise ValueError(f"BAWGNC noise standard deviation must be positive, got {p}")

    def __str__(self):
        return f"{self.family.value.upper()}({self.param:.12g})"


@dataclass(frozen=True)
class QuantizedBms:
    """
    Finite representation of a BMS channel.

    `llr[k]` is a finite |LLR| level and `prob[k]` its probability under the
    all-zero input (the sign split is implied by symmetry); `perfect` is the
    probability of the noiseless symbol |LLR| = inf.
    """
    llr: np.ndarray
    prob: np.ndarray
    perfect: float = 0.0
    resolution: int = DEFAULT_RESOLUTION

    def __post_init__(self):
        llr = np.asarray(self.llr, dtype=float)
        prob = np.asarray(self.prob, dtype=float)
        if llr.shape != prob.shape or llr.ndim != 1:
            raise ValueError("llr and prob must be 1-D arrays of equal length")
        llr.setflags(write=False)
        prob.setflags(write=False)
        object.__setattr__(self, 'llr', llr)
        object.__setattr__(self, 'prob', prob)
        object.__setattr__(self, 'perfect', float(self.perfect))

    @property
    def size(self) -> int:
        return len(self.llr) + (1 if self.perfect > 0 else 0)

    def pairs(self) -> List[Tuple[float, float]]:
        out = [(float(m), float(p)) for m, p in zip(self.llr, self.prob)]
        if self.perfect > 0:
            out.append((INFINITE_LLR, self.perfect))
        return out

    def total_probability(self) -> float:
        return float(self.prob.sum() + self.perfect)


# ---------------------------------------------------------------------------
# Scalar figures of merit
# ---------------------------------------------------------------------------

def binary_entropy(p):
    """h2(p) in bits, 0 at the endpoints."""
    p = np.asarray(p, dtype=float)
    return (special.entr(p) + special.entr(1.0 - p)) / np.log(2.0)


def bhattacharyya(channel: BmsChannel) -> float:
    p = channel.param
    if channel.family is Family.BEC:
        return p
    if channel.family is Family.BSC:
        return 2.0 * math.sqrt(p * (1.0 - p))
    return math.exp(-1.0 / (2.0 * p * p))


def _bawgnc_capacity(sigma: float) -> float:
    # z = (y - 1) / sigma, y ~ N(1, sigma^2) under x = 0, LLR = 2y / sigma^2
    def integrand(z):
        llr = 2.0 * (1.0 + sigma * z) / (sigma * sigma)
        return stats.norm.pdf(z) * np.logaddexp(0.0, -llr)

    loss, _ = integrate.quad(integrand, -40.0, 40.0, epsabs=1e-13, epsrel=1e-12, limit=500)
    return float(min(1.0, max(0.0, 1.0 - loss / math.log(2.0))))


def capacity(channel: BmsChannel) -> float:
    p = channel.param
    if channel.family is Family.BEC:
        return 1.0 - p
    if channel.family is Family.BSC:
        return float(1.0 - binary_entropy(p))
    return _bawgnc_capacity(p)


def channel_from_capacity(family, target_capacity: float) -> BmsChannel:
    """Invert the (strictly monotone) capacity of a family by bisection."""
    family = Family.parse(family)
    if not 0.0 < target_capacity < 1.0:
        raise ValueError(f"Target capacity must lie in (0, 1), got {target_capacity}")

    if family is Family.BEC:
        return BmsChannel(family, 1.0 - target_capacity)

    if family is Family.BSC:
        lo, hi = 0.0, 0.5
    else:
        lo, hi = 1e-2, 1.0
        while _bawgnc_capacity(hi) > target_capacity:
            hi *= 2.0
            if hi > 1e12:
                raise RuntimeError(f"Cannot bracket BAWGNC capacity {target_capacity}")

    def gap(param):
        return capacity(BmsChannel(family, param)) - target_capacity

    # scipy raises RuntimeError itself if the iteration cap is hit
    param = optimize.bisect(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    channel = BmsChannel(family, param)
    logger.debug("Channel with capacity %.6f: %s", target_capacity, channel)
    return channel


# ---------------------------------------------------------------------------
# Finite representation
# ---------------------------------------------------------------------------

def bhattacharyya_weight(llr):
    """1/cosh(m/2): the Bhattacharyya contribution of unit mass at |LLR| = m."""
    llr = np.asarray(llr, dtype=float)
    return 2.0 * np.exp(0.5 * (special.log_expit(llr) + special.log_expit(-llr)))


def bhattacharyya_quantized(q: QuantizedBms) -> float:
    return float(np.sum(q.prob * bhattacharyya_weight(q.llr)))


def capacity_quantized(q: QuantizedBms) -> float:
    bits = 1.0 - binary_entropy(special.expit(q.llr))
    return float(np.sum(q.prob * bits) + q.perfect)


def _log_gauss_mass(lo, hi):
    """log P(lo <= Z < hi) for a standard normal Z, stable in both tails."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    upper = lo > 0
    # upper tail: Q(lo) - Q(hi); lower tail: Phi(hi) - Phi(lo)
    big = np.where(upper, special.log_ndtr(-lo), special.log_ndtr(hi))
    small = np.where(upper, special.log_ndtr(-hi), special.log_ndtr(lo))
    with np.errstate(divide='ignore'):
        return big + np.log1p(-np.exp(small - big))


def _quantize_bawgnc(sigma: float, resolution: int) -> QuantizedBms:
    # bins uniform in Bhattacharyya weight w = 1/cosh(m/2)
    w_edges = np.arange(resolution + 1) / resolution
    with np.errstate(divide='ignore'):
        m_edges = 2.0 * np.arccosh(1.0 / w_edges)
    lo = m_edges[1:][::-1]
    hi = m_edges[:-1][::-1]

    mean = 2.0 / sigma**2
    std = 2.0 / sigma
    log_p0 = _log_gauss_mass((lo - mean) / std, (hi - mean) / std)
    log_p1 = _log_gauss_mass((-hi - mean) / std, (-lo - mean) / std)

    prob = np.exp(log_p0) + np.exp(log_p1)
    keep = prob > 0
    with np.errstate(invalid='ignore'):
        llr = (log_p0 - log_p1)[keep]
    prob = prob[keep]
    llr = np.maximum(llr, 0.0)
    prob = prob / prob.sum()
    return _canonical(llr, prob, 0.0, resolution)


def quantize(channel: BmsChannel, resolution: int = DEFAULT_RESOLUTION) -> QuantizedBms:
    """Degraded finite representation with at most `resolution` finite |LLR| levels."""
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    p = channel.param
    if channel.family is Family.BEC:
        return _canonical(np.array([0.0]), np.array([p]), 1.0 - p, resolution)
    if channel.family is Family.BSC:
        if p == 0.0:
            return _canonical(np.empty(0), np.empty(0), 1.0, resolution)
        return _canonical(np.array([math.log((1.0 - p) / p)]), np.array([1.0]), 0.0, resolution)
    return _quantize_bawgnc(p, resolution)


def _canonical(llr, prob, perfect, resolution) -> QuantizedBms:
    llr = np.asarray(llr, dtype=float)
    prob = np.asarray(prob, dtype=float)
    keep = prob > 0
    llr, prob = llr[keep], prob[keep]
    levels, inverse = np.unique(llr, return_inverse=True)
    merged = np.bincount(inverse, weights=prob, minlength=len(levels))
    return QuantizedBms(levels, merged, perfect, resolution)


def polar_transform(q: QuantizedBms, branch: int, merge: bool = True) -> QuantizedBms:
    """
    One polarization step on a finite channel.

    Branch 0 is the check-node (worse) channel, branch 1 the variable-node
    (better) one. With `merge=False` the output alphabet is left unreduced.
    """
    if branch not in (0, 1):
        raise ValueError(f"branch must be 0 or 1, got {branch}")
    llr = q.llr[None, :]
    prob = q.prob[None, :]
    perfect = np.array([q.perfect])
    if branch == 0:
        llr, prob, perfect = check_node_batch(llr, prob, perfect)
    else:
        llr, prob, perfect = variable_node_batch(llr, prob, perfect)
    if merge:
        llr, prob = merge_batch(llr, prob, q.resolution)
    return _canonical(llr[0], prob[0], float(perfect[0]), q.resolution)


# ---------------------------------------------------------------------------
# Batch kernels (rows are independent channels)
# ---------------------------------------------------------------------------

def boxplus_magnitude(a, b):
    """|a [+] b| for magnitudes a, b >= 0, without overflow."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mag = (np.minimum(a, b)
           + np.log1p(np.exp(-(a + b)))
           - np.log1p(np.exp(-np.abs(a - b))))
    return np.maximum(mag, 0.0)


def check_node_batch(llr, prob, perfect):
    rows, size = llr.shape
    pair_llr = boxplus_magnitude(llr[:, :, None], llr[:, None, :]).reshape(rows, size * size)
    pair_prob = (prob[:, :, None] * prob[:, None, :]).reshape(rows, size * size)
    # one perfect input leaves the other magnitude unchanged
    solo_prob = 2.0 * prob * perfect[:, None]
    out_llr = np.concatenate([pair_llr, llr], axis=1)
    out_prob = np.concatenate([pair_prob, solo_prob], axis=1)
    return out_llr, out_prob, perfect * perfect


def variable_node_batch(llr, prob, perfect):
    rows, size = llr.shape
    q = special.expit(llr)
    same = q[:, :, None] * q[:, None, :] + (1.0 - q[:, :, None]) * (1.0 - q[:, None, :])
    joint = prob[:, :, None] * prob[:, None, :]
    total = llr[:, :, None] + llr[:, None, :]
    diff = np.abs(llr[:, :, None] - llr[:, None, :])
    out_llr = np.concatenate([total.reshape(rows, -1), diff.reshape(rows, -1)], axis=1)
    out_prob = np.concatenate([(joint * same).reshape(rows, -1),
                               (joint * (1.0 - same)).reshape(rows, -1)], axis=1)
    finite_mass = 1.0 - perfect
    return out_llr, out_prob, 1.0 - finite_mass * finite_mass


def bhattacharyya_batch(llr, prob):
    return np.sum(prob * bhattacharyya_weight(llr), axis=1)


def _merge_pairs(llr_a, prob_a, llr_b, prob_b):
    """Merge symbol a with symbol b (same sign with same sign)."""
    with np.errstate(divide='ignore', invalid='ignore'):
        log_a = np.log(prob_a)
        log_b = np.log(prob_b)
        log_p0 = np.logaddexp(log_a + special.log_expit(llr_a), log_b + special.log_expit(llr_b))
        log_p1 = np.logaddexp(log_a + special.log_expit(-llr_a), log_b + special.log_expit(-llr_b))
        merged_llr = log_p0 - log_p1
        merged_z = 2.0 * np.exp(0.5 * (log_p0 + log_p1))
    total = prob_a + prob_b
    merged_llr = np.where(total > 0, merged_llr, llr_a)
    merged_z = np.where(total > 0, merged_z, 0.0)
    return merged_llr, total, merged_z


def merge_batch(llr, prob, resolution: int):
    """
    Reduce every row to at most `resolution` symbols by degrading merges.

    Rows are sorted by |LLR| and merged greedily. A merge joins two adjacent
    symbols and costs the increase of the Bhattacharyya parameter. A pair is
    a candidate when it is cheaper than the pair on its left and no dearer
    than the pair on its right, so candidates never overlap and the cheapest
    pair of the row is always one. Each round merges the cheapest candidates,
    at most a quarter of the row and never more than the excess, until the
    row fits. Rows are returned padded with zero-probability symbols to a
    common width.
    """
    llr = np.asarray(llr, dtype=float)
    prob = np.asarray(prob, dtype=float)
    order = np.argsort(llr, axis=1, kind='stable')
    llr = np.take_along_axis(llr, order, axis=1)
    prob = np.take_along_axis(prob, order, axis=1)
    llr, prob, counts = _pack(llr, prob)
    rows = llr.shape[0]

    while counts.max(initial=0) > resolution:
        excess = np.maximum(counts - resolution, 0)
        merged_llr, merged_prob, merged_z = _merge_pairs(llr[:, :-1], prob[:, :-1],
                                                         llr[:, 1:], prob[:, 1:])
        z = prob * bhattacharyya_weight(llr)
        cost = merged_z - (z[:, :-1] + z[:, 1:])
        valid = np.arange(1, llr.shape[1])[None, :] < counts[:, None]
        cost = np.where(valid, cost, np.inf)

        edge = np.full((rows, 1), np.inf)
        before = np.concatenate([edge, cost[:, :-1]], axis=1)
        after = np.concatenate([cost[:, 1:], edge], axis=1)
        candidate = valid & (cost < before) & (cost <= after)

        quota = np.minimum(excess, np.maximum(1, counts // 4))
        ranked = np.sort(np.where(candidate, cost, np.inf), axis=1)
        threshold = np.take_along_axis(ranked, np.maximum(quota - 1, 0)[:, None], axis=1)
        chosen = candidate & (cost <= threshold) & (quota > 0)[:, None]

        llr[:, :-1] = np.where(chosen, merged_llr, llr[:, :-1])
        prob[:, :-1] = np.where(chosen, merged_prob, prob[:, :-1])
        prob[:, 1:] = np.where(chosen, 0.0, prob[:, 1:])
        llr, prob, counts = _pack(llr, prob)

    return llr, prob


def _pack(llr, prob):
    """Move zero-mass symbols to the right and cut the common width."""
    occupied = prob > 0
    pack = np.argsort(~occupied, axis=1, kind='stable')
    llr = np.take_along_axis(llr, pack, axis=1)
    prob = np.take_along_axis(prob, pack, axis=1)
    counts = occupied.sum(axis=1)
    width = max(int(counts.max()) if counts.size else 0, 1)
    return llr[:, :width], prob[:, :width], counts
