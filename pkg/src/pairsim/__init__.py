"""Cycle-level simulator of a task-aware post-violation monitor for MCUs."""

__version__ = "0.1.0"
