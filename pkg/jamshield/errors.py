class JamShieldError(Exception):
    """Base class for errors raised by the detection pipeline."""


class SchemaError(JamShieldError, ValueError):
    """Manifest, dataset, taxonomy or width mismatch."""


class ConfigError(JamShieldError, ValueError):
    """Invalid scenario, learner or AutoCM configuration."""


class TrainingError(JamShieldError, RuntimeError):
    """A learner could not be fitted or used."""


class NoCandidateError(JamShieldError, RuntimeError):
    """Every evaluated algorithm failed, nothing to select."""
