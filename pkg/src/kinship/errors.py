"""Exception types raised across the toolkit.

Every error carries a ``kind`` (the class name) so the command line can
report failures as ``ERROR <kind>: <detail>``.
"""


class KinshipError(Exception):
    """Base class for all toolkit errors."""

    @property
    def kind(self):
        return type(self).__name__


class ZeroVector(KinshipError, ValueError):
    pass


class DimensionMismatch(KinshipError, ValueError):
    pass


class NonFiniteValue(KinshipError, ValueError):
    pass


class EmptyBatch(KinshipError, ValueError):
    pass


class EmptyInput(KinshipError, ValueError):
    pass


class LabelOutOfRange(KinshipError, ValueError):
    pass


class NearSingular(KinshipError, ValueError):
    pass


class InsufficientClasses(KinshipError, ValueError):
    pass


class NonFiniteLoss(KinshipError, ArithmeticError):
    def __init__(self, epoch, detail=""):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}" + (f": {detail}" if detail else ""))


class SingleClass(KinshipError, ValueError):
    pass


class EmptyCalibration(KinshipError, ValueError):
    pass


class UnknownImageId(KinshipError, KeyError):
    def __init__(self, image_id):
        self.image_id = image_id
        super().__init__(image_id)

    def __str__(self):
        return f"unknown image id {self.image_id!r}"


class MissingCalibration(KinshipError, ValueError):
    pass


class MissingClassifier(KinshipError, ValueError):
    pass


class MissingLabel(KinshipError, ValueError):
    pass


class NoRelevant(KinshipError, ValueError):
    pass


class MalformedHeader(KinshipError, ValueError):
    pass


class MalformedRow(KinshipError, ValueError):
    pass


class InconsistentDimension(KinshipError, ValueError):
    pass


class DuplicateId(KinshipError, ValueError):
    pass


class InvalidLabel(KinshipError, ValueError):
    pass


class NonContiguousGalleryIndex(KinshipError, ValueError):
    pass


class IoFailure(KinshipError, OSError):
    pass


class GradientCheckFailed(KinshipError, ArithmeticError):
    pass
