"""Inverse differential games: recover cost parameters of N-player
feedback-Nash games from observed trajectories, offline and online."""

__version__ = "0.1.0"
