"""Exception types raised across the package."""


class GaclError(ValueError):
    """Base class for all domain errors."""


class EmptyGenderClass(GaclError):
    pass


class OddCount(GaclError):
    pass


class ShapeMismatch(GaclError):
    pass


class NotScalar(GaclError):
    pass


class TooLong(GaclError):
    pass


class AllMasked(GaclError):
    pass


class AllPadded(GaclError):
    pass


class MissingGenderClass(GaclError):
    pass


class EmptyPositives(GaclError):
    pass


class Diverged(GaclError):
    pass


class BatchTooLarge(GaclError):
    pass


class LengthMismatch(GaclError):
    pass


class EmptySubset(GaclError):
    pass


class ZeroVariance(GaclError):
    pass


class DegenerateInput(GaclError):
    pass


class OccupationNotInVocab(GaclError):
    pass


class MissingContext(GaclError):
    pass


class ConfigError(GaclError):
    pass


class CheckpointError(GaclError):
    pass
