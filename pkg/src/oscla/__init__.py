"""Optimal symplectic connection laboratory: desk-scale models, operators and
verification pipelines for adiabatic extremal-metric constructions on
P^1-bundles over P^1."""

__version__ = "0.1.0"
