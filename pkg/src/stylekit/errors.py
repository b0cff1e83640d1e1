"""Typed errors raised by the toolkit.

Every validation failure surfaces as a subclass of StylekitError with a
message carrying the location (file, line, row/col or image id) when one
exists. The CLI maps StylekitError to exit status 1 and anything else to 2.
"""


class StylekitError(Exception):
    pass


# ---- store ----------------------------------------------------------------

class MissingFile(StylekitError):
    pass


class ShapeMismatch(StylekitError):
    pass


class NonFiniteValue(StylekitError):
    pass


class NormViolation(StylekitError):
    pass


class IoFailure(StylekitError):
    pass


class UnknownOutcome(StylekitError):
    pass


class ScoreOutOfRange(StylekitError):
    pass


class MalformedRow(StylekitError):
    pass


# ---- token planning -------------------------------------------------------

class VocabularyTooSmall(StylekitError):
    pass


class TooFewPoints(StylekitError):
    pass


class DegenerateInput(StylekitError):
    pass


class LengthMismatch(StylekitError):
    pass


# ---- identity sampling ----------------------------------------------------

class TooFewSamples(StylekitError):
    pass


class FactorizationFailure(StylekitError):
    pass


class EmptyPool(StylekitError):
    pass


# ---- metrics --------------------------------------------------------------

class ZeroVector(StylekitError):
    pass


class DimMismatch(StylekitError):
    pass


class EmptySet(StylekitError):
    pass


# ---- validity filter ------------------------------------------------------

class MissingEmbeddingSpace(StylekitError):
    pass


class MissingCount(StylekitError):
    pass


class UnknownImageInOverride(StylekitError):
    pass


class DimensionMismatch(StylekitError):
    pass


class UnreadableImage(StylekitError):
    pass


# ---- judgment aggregation -------------------------------------------------

class NoRecords(StylekitError):
    pass


class DisconnectedGraph(StylekitError):
    """Comparison graph splits into components; message lists them."""

    def __init__(self, components):
        self.components = [sorted(c) for c in components]
        parts = " | ".join(", ".join(c) for c in self.components)
        super().__init__(f"comparison graph is disconnected: {parts}")


class DegenerateRecords(StylekitError):
    """Win pattern admits no finite maximum-likelihood strengths."""


class EmptyGroup(StylekitError):
    pass


# ---- reporting / CLI ------------------------------------------------------

class MissingGroup(StylekitError):
    pass


class EmptyCell(StylekitError):
    pass


class UsageError(StylekitError):
    pass
