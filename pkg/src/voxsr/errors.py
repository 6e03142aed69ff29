"""Exception hierarchy shared by all voxsr modules."""

from __future__ import annotations


class VoxsrError(Exception):
    """Base class for all voxsr-specific errors."""


class FormatError(VoxsrError):
    """A file does not conform to an expected on-disk format."""


class GridError(VoxsrError):
    """Grid or array shapes are inconsistent with an operation's contract."""


class ConfigError(VoxsrError):
    """A configuration value is invalid or inconsistent with another."""


class NonFiniteError(VoxsrError):
    """A volume or parameter set contains NaN or Inf values."""


class DivergenceError(VoxsrError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class AnalysisError(VoxsrError):
    """A functional-analysis step is degenerate (empty mask, zero-variance seed)."""


class StateError(VoxsrError):
    """An object was used in an invalid state (e.g. a tape consumed twice)."""
