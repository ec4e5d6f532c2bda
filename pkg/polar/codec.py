"""
Polar encoder and tree decoders (SC, SSC, Fast-SSC).

All routines accept a single word of shape (N,) or a batch of shape (B, N);
the decoding tree only depends on the frozen mask, so a batch walks it once.

Hard decisions read the sign bit of the LLR: +0 decides 0, -0 decides 1.
This departs from the plain "an LLR of 0 decides 0" tie rule: a zero that
carries a negative sign decides 1. Both node updates carry the sign of zero
through, which makes the one-step Rate-1 and Rep rules reproduce the
bit-by-bit recursion exactly, ties included.
"""

from enum import Enum
from typing import Tuple

import numpy as np

from polar.channel import boxplus_magnitude
from polar.construction import PolarCode

F_EXACT = 'exact'
F_MIN_SUM = 'min-sum'


class NodeKind(str, Enum):
    RATE0 = 'rate0'
    RATE1 = 'rate1'
    REP = 'rep'
    SPC = 'spc'
    BRANCH = 'branch'


class Variant(str, Enum):
    SC = 'sc'
    SSC = 'ssc'
    FASTSSC = 'fastssc'

    @classmethod
    def parse(cls, value) -> 'Variant':
        if isinstance(value, Variant):
            return value
        key = str(value).lower().replace('-', '').replace('_', '')
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"Unknown decoder variant: {value!r} (expected sc, ssc or fastssc)") from None

    @property
    def terminals(self) -> frozenset:
        if self is Variant.SC:
            return frozenset()
        if self is Variant.SSC:
            return frozenset({NodeKind.RATE0, NodeKind.RATE1})
        return frozenset({NodeKind.RATE0, NodeKind.RATE1, NodeKind.REP, NodeKind.SPC})


def _as_batch(words):
    words = np.asarray(words)
    single = words.ndim == 1
    return (words[None, :] if single else words), single


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def polar_butterfly(u) -> np.ndarray:
    """x = u F^{(x)n} over GF(2), natural order; the map is its own inverse."""
    x, single = _as_batch(u)
    x = x.astype(np.uint8, copy=True)
    rows, size = x.shape
    if size & (size - 1):
        raise ValueError(f"Length must be a power of two, got {size}")
    half = size // 2
    while half >= 1:
        view = x.reshape(rows, size // (2 * half), 2, half)
        view[:, :, 0, :] ^= view[:, :, 1, :]
        half //= 2
    return x[0] if single else x


def encode(info_bits, code: PolarCode) -> np.ndarray:
    bits, single = _as_batch(info_bits)
    if bits.shape[1] != code.info_count:
        raise ValueError(f"Expected {code.info_count} information bits, got {bits.shape[1]}")
    u = np.zeros((bits.shape[0], code.size), dtype=np.uint8)
    u[:, code.info_positions] = bits
    x = polar_butterfly(u)
    return x[0] if single else x


# ---------------------------------------------------------------------------
# Node updates
# ---------------------------------------------------------------------------

def f_left(a, b, rule: str = F_EXACT):
    """Check-node update ln((1 + e^(a+b)) / (e^a + e^b)), or its min-sum form."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if rule == F_EXACT:
        mag = boxplus_magnitude(np.abs(a), np.abs(b))
    elif rule == F_MIN_SUM:
        mag = np.minimum(np.abs(a), np.abs(b))
    else:
        raise ValueError(f"Unknown f_left rule {rule!r}")
    return np.copysign(mag, a) * np.copysign(1.0, b)


def f_right(a, b, c):
    return np.asarray(b, dtype=float) + (1.0 - 2.0 * np.asarray(c, dtype=float)) * np.asarray(a, dtype=float)


def hard_decision(alpha) -> np.ndarray:
    return np.signbit(alpha).astype(np.uint8)


# ---------------------------------------------------------------------------
# Node classification
# ---------------------------------------------------------------------------

def classify(code: PolarCode, level: int, offset: int) -> NodeKind:
    if not 0 <= level <= code.n or not 0 <= offset < 1 << (code.n - level):
        raise ValueError(f"Node (level={level}, offset={offset}) outside a tree of depth {code.n}")
    size = 1 << level
    start = offset * size
    end = start + size
    prefix = code.info_prefix
    info = int(prefix[end] - prefix[start])
    if info == 0:
        return NodeKind.RATE0
    if info == size:
        return NodeKind.RATE1
    if info == 1 and not code.frozen[end - 1]:
        return NodeKind.REP
    if info == size - 1 and code.frozen[start]:
        return NodeKind.SPC
    return NodeKind.BRANCH


def rep_decode(alpha) -> np.ndarray:
    """Common bit from the pairwise-folded LLR sum, broadcast to the node."""
    total = alpha
    while total.shape[1] > 1:
        half = total.shape[1] // 2
        total = f_right(total[:, :half], total[:, half:], 0)
    return np.repeat(hard_decision(total), alpha.shape[1], axis=1)


def spc_decode(alpha) -> np.ndarray:
    """Wagner rule: hard decisions, flip the least reliable one on odd parity."""
    beta = hard_decision(alpha)
    odd = np.bitwise_xor.reduce(beta, axis=1).astype(bool)
    weakest = np.argmin(np.abs(alpha), axis=1)
    rows = np.flatnonzero(odd)
    beta[rows, weakest[rows]] ^= 1
    return beta


# ---------------------------------------------------------------------------
# Decoders
# ---------------------------------------------------------------------------

def _decode_node(alpha, code: PolarCode, level: int, offset: int,
                 terminals: frozenset, rule: str) -> Tuple[np.ndarray, np.ndarray]:
    kind = classify(code, level, offset)
    if level == 0 or kind in terminals:
        if kind is NodeKind.RATE0:
            beta = np.zeros(alpha.shape, dtype=np.uint8)
        elif kind is NodeKind.RATE1:
            beta = hard_decision(alpha)
        elif kind is NodeKind.REP:
            beta = rep_decode(alpha)
        else:
            beta = spc_decode(alpha)
        return beta, polar_butterfly(beta)

    half = alpha.shape[1] // 2
    left_alpha = f_left(alpha[:, :half], alpha[:, half:], rule)
    left_beta, left_u = _decode_node(left_alpha, code, level - 1, 2 * offset, terminals, rule)
    right_alpha = f_right(alpha[:, :half], alpha[:, half:], left_beta)
    right_beta, right_u = _decode_node(right_alpha, code, level - 1, 2 * offset + 1, terminals, rule)
    beta = np.concatenate([left_beta ^ right_beta, right_beta], axis=1)
    return beta, np.concatenate([left_u, right_u], axis=1)


def _decode(llr, code: PolarCode, variant: Variant, rule: str):
    alpha, single = _as_batch(np.asarray(llr, dtype=float))
    if alpha.shape[1] != code.size:
        raise ValueError(f"Expected {code.size} LLRs, got {alpha.shape[1]}")
    x_hat, u_hat = _decode_node(alpha, code, code.n, 0, variant.terminals, rule)
    if single:
        return u_hat[0], x_hat[0]
    return u_hat, x_hat


def sc_decode(llr, code: PolarCode, f_rule: str = F_EXACT):
    """Successive cancellation; returns (u_hat, x_hat)."""
    return _decode(llr, code, Variant.SC, f_rule)


def ssc_decode(llr, code: PolarCode, variant=Variant.SSC, f_rule: str = F_EXACT):
    """Pruned decoding: SSC stops at Rate-0/Rate-1 nodes, Fast-SSC also at Rep/SPC."""
    return _decode(llr, code, Variant.parse(variant), f_rule)


def decode(llr, code: PolarCode, variant=Variant.SC, f_rule: str = F_EXACT):
    variant = Variant.parse(variant)
    if variant is Variant.SC:
        return sc_decode(llr, code, f_rule)
    return ssc_decode(llr, code, variant, f_rule)
