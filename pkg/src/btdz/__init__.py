"""Behavioural task distributions for zero-shot RL on exact tabular MDPs."""

__version__ = "0.1.0"
