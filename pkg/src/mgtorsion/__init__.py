"""Simulation and analysis toolkit for a feedback-cooled milligram torsion pendulum."""

__version__ = "0.1.0"
