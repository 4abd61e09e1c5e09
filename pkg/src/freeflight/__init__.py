"""Time-optimal free-flight trajectories in stationary 2D wind."""

__version__ = "0.1.0"
