"""Shared exception types."""

from __future__ import annotations


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or exploding iterates."""

    def __init__(self, step_index: int, message: str):
        super().__init__(f"{message} (step {step_index})")
        self.step_index = step_index


class ConfigError(ValueError):
    """Invalid experiment configuration; names the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field '{field}': {message}")
        self.field = field
