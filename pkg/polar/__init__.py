"""Polar code construction, tree decoding and latency counting."""

from polar.channel import BmsChannel, Family, QuantizedBms
from polar.codec import NodeKind, Variant
from polar.construction import PolarCode, ReliabilityTable

__version__ = '1.0.0'

__all__ = ['BmsChannel', 'Family', 'QuantizedBms', 'NodeKind', 'Variant',
           'PolarCode', 'ReliabilityTable', '__version__']
