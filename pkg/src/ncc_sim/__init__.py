"""Simulation and inference engine for platform trials that reuse
non-concurrent controls through model-based time-trend adjustment.

The package is organized bottom-up: ``design`` (trial layout and scenario
truth), ``randomization`` (assignment sequences and replicate streams),
``datagen`` (simulated datasets), ``inference`` (analysis models and the
closed-form weight analytics), ``montecarlo`` (grids, replication, and
aggregation), and ``cli`` (the ``ncc-sim`` command).
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
