"""Exception hierarchy.

Every error carries a module-qualified ``code`` (e.g. ``"effect_sizes.InvalidCount"``)
so the command line can report failures in a stable, greppable form.
"""


class MetaBootError(Exception):
    """Base class for all package errors."""

    module = "metaboot"

    @property
    def code(self) -> str:
        return f"{self.module}.{type(self).__name__}"


# effect_sizes
class EffectSizeError(MetaBootError, ValueError):
    module = "effect_sizes"


class InvalidCount(EffectSizeError):
    pass


class DegenerateSpread(EffectSizeError):
    pass


class BoundaryCorrelation(EffectSizeError):
    pass


class AllZero(EffectSizeError):
    pass


# meta_model
class ModelError(MetaBootError):
    module = "meta_model"


class InvalidDataset(ModelError, ValueError):
    pass


class SingularDesign(ModelError, ValueError):
    pass


class NonConvergence(ModelError, RuntimeError):
    pass


# bootstrap
class BootstrapError(MetaBootError):
    module = "bootstrap"


class MissingRaw(BootstrapError, ValueError):
    pass


class EmptyInput(BootstrapError, ValueError):
    pass


# simulation
class SimulationError(MetaBootError):
    module = "simulation"


class DegenerateSample(SimulationError, RuntimeError):
    pass


class InvalidConfig(SimulationError, ValueError):
    pass


# cli / ingestion
class IngestError(MetaBootError):
    module = "cli"


class SchemaError(IngestError, ValueError):
    pass


class RowError(IngestError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyDataset(IngestError, ValueError):
    pass


class InvalidRequest(IngestError, ValueError):
    pass
