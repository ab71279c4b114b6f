"""Non-neural core of ground-level vision-and-language navigation.

Topological mapping with ghost nodes, multi-view feature fusion, waypoint
dataset tooling and evaluation, a desk-scale simulator and trajectory metrics.
"""

__version__ = "0.1.0"
