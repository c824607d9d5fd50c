"""Exception types shared across the package."""


class MotionFieldError(Exception):
    """Base class for all package errors."""


class GeometryError(MotionFieldError):
    """Invalid geometric input (non-positive depth, singular configuration)."""


class ConfigError(MotionFieldError):
    """A configuration value is missing, unknown, or out of range."""


class MeshParseError(MotionFieldError):
    """OBJ/STL input could not be parsed; message carries line/offset."""


class GenerationError(MotionFieldError):
    """Scene sampling could not satisfy its constraints."""


class IntegrityError(MotionFieldError):
    """A shard failed its size or checksum verification."""


class DegenerateFitError(MotionFieldError):
    """Point configuration too degenerate for a rigid fit (collinear/coincident)."""


class RansacFailedError(MotionFieldError):
    """No RANSAC hypothesis reached the minimum consensus."""


class TrainingDivergedError(MotionFieldError):
    """Loss became non-finite during optimization."""
