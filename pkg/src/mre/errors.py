"""Exception hierarchy shared across the package.

CLI exit codes map onto these: ConfigError -> 2, NumericalError -> 3,
PipelineOrderError -> 4.
"""


class InvalidInputError(ValueError):
    """Arguments violate a documented precondition."""


class AssemblyError(RuntimeError):
    """FE assembly produced an unusable (e.g. singular) system."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or became unstable."""


class TrainingDivergedError(NumericalError):
    """Network training hit a NaN/inf loss."""


class ConfigError(ValueError):
    """Experiment configuration is malformed or fails schema validation."""


class PipelineOrderError(RuntimeError):
    """A pipeline stage ran before its input artifacts exist."""


class IncompatibleArtifactsError(RuntimeError):
    """Artifacts from different runs or meshes were mixed."""
