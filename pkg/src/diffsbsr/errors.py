"""Exception types shared across the retrieval framework."""


class DiffSbsrError(Exception):
    """Base class for all framework errors."""


# dataset / manifest
class MissingDirectory(DiffSbsrError):
    pass


class DuplicateId(DiffSbsrError):
    pass


class EmptyCategory(DiffSbsrError):
    pass


class CountMismatch(DiffSbsrError):
    pass


# rendering
class MeshLoadFailure(DiffSbsrError):
    pass


class DegenerateMesh(DiffSbsrError):
    pass


# encoders / backbone
class EncoderUnavailable(DiffSbsrError):
    pass


class CaptionerUnavailable(DiffSbsrError):
    pass


class BadImageSize(DiffSbsrError):
    pass


class InvalidTimestep(DiffSbsrError):
    pass


class HookMismatch(DiffSbsrError):
    pass


class NonFiniteFeatures(DiffSbsrError):
    pass


class ShapeMismatch(DiffSbsrError):
    pass


# losses
class NonFiniteSimilarity(DiffSbsrError):
    pass


class UnknownLabel(DiffSbsrError):
    pass


class NonFiniteLoss(DiffSbsrError):
    pass


# training / data
class InsufficientData(DiffSbsrError):
    pass


class CheckpointCorrupt(DiffSbsrError):
    pass


# evaluation
class EmptyIndex(DiffSbsrError):
    pass


class EmptyViewSet(DiffSbsrError):
    pass
