"""Exception hierarchy shared by all modules."""


class SpatialError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class ParseError(SpatialError):
    def __init__(self, where, reason):
        self.where = where
        self.reason = reason
        super().__init__(f"{where}: {reason}")


class ValidationError(SpatialError):
    pass


class UnknownPreposition(SpatialError):
    pass


class DimensionMismatch(SpatialError):
    pass


class MissingCategory(SpatialError):
    def __init__(self, scene, noun):
        self.scene = scene
        self.noun = noun
        super().__init__(f"scene {scene!r} has no detection of {noun!r}")


class EmptyBatch(SpatialError):
    pass


class DivergenceError(SpatialError):
    pass


class GenerationError(SpatialError):
    pass
