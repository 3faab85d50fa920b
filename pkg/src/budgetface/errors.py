"""Exception hierarchy shared by all budgetface modules."""


class BudgetFaceError(Exception):
    """Base class for all toolkit errors."""


class ZeroVector(BudgetFaceError):
    """Normalization requested for a vector with (near-)zero L2 norm."""


class DimensionMismatch(BudgetFaceError):
    """Operands have incompatible dimensions."""


class InvalidLabel(BudgetFaceError):
    """A class label is outside the valid index range."""


class NonFiniteInput(BudgetFaceError):
    """An input contains NaN or infinity."""


class StaleIntermediates(BudgetFaceError):
    """Backward pass requested on an output lacking stored intermediates."""


class SingleClass(BudgetFaceError):
    """Operation needs at least two classes."""


class InvalidClass(BudgetFaceError):
    """Referenced class id does not exist."""


class DegenerateDistribution(BudgetFaceError):
    """Statistics requested over a constant sample."""


class AllEqual(BudgetFaceError):
    """Rescaling requested for an all-equal quality list."""


class EmptySet(BudgetFaceError):
    """Aggregation requested over an empty frame set."""


class MissingQualities(BudgetFaceError):
    """Quality-dependent policy used on a set without quality scores."""


class OutOfRange(BudgetFaceError):
    """Iteration index outside the schedule range."""


class InvalidRate(BudgetFaceError):
    """Keep rate outside (0, 1]."""


class EmptyStream(BudgetFaceError):
    """Statistics recalibration received no batches."""


class ShapeMismatch(BudgetFaceError):
    """Layer input shape is incompatible with the layer parameters."""


class EmptyResult(BudgetFaceError):
    """No architecture candidate fits the budget."""


class InsufficientData(BudgetFaceError):
    """Not enough identities or samples to build verification pairs."""


class EmptyScores(BudgetFaceError):
    """Score lists are empty."""


class InvalidSpec(BudgetFaceError):
    """Synthetic data specification fails validation."""


class DivergedLoss(BudgetFaceError):
    """Training loss became non-finite."""
