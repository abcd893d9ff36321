"""epiview: training-free multi-view consistent view synthesis via
epipolar feature retrieval, with analytic oracles at desk scale."""

__version__ = "0.1.0"
