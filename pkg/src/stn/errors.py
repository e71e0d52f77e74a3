"""Exception types shared across the package."""


class UnknownToken(ValueError):
    """A token name or id outside the vocabulary."""

    def __init__(self, name):
        super().__init__("unknown token: %r" % (name,))
        self.name = name


class ParseError(ValueError):
    """Token sequence does not conform to the grammar."""

    def __init__(self, position, message="parse error"):
        super().__init__("%s at position %d" % (message, position))
        self.position = position


class DimensionMismatch(ValueError):
    """Two images (or grids) with incompatible dimensions."""


class ShapeError(ValueError):
    """An array input with the wrong shape."""


class StateError(RuntimeError):
    """Backward called without a cached forward pass."""


class NonFiniteLoss(FloatingPointError):
    """Training aborted on a NaN/inf loss; carries the offending batch index."""

    def __init__(self, batch_index):
        super().__init__("non-finite loss at batch %d" % batch_index)
        self.batch_index = batch_index
