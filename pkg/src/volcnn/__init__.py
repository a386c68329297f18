"""Desk-scale onboard volcanic-eruption detector.

Multispectral preprocessing, two from-scratch CNNs (full and pruned),
class-balanced training, a deployable binary weight format, and an
inference/benchmark harness.
"""

__version__ = "0.1.0"
