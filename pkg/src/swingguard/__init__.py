"""Real-time transient instability detection from PMU streams.

The package covers the simulation substrate (``netmodel``, ``simulator``),
measurement handling (``pmu``), generator grouping and two-layer SMIB
equivalence (``grouping``, ``equivalence``), the instability detector
(``detector``), the orchestrating scheme (``scheme``) and batch tooling
(``bench``, ``studies``, ``cli``).
"""

__version__ = "0.1.0"
