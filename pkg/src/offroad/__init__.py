"""Off-road route planning, trajectory generation, and tracking simulation."""

__version__ = "0.1.0"
