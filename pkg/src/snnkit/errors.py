"""Exception hierarchy shared across the toolkit."""


class SnnkitError(Exception):
    """Base class for all snnkit errors."""


# --- IDX / dataset loading ---

class IdxFormatError(SnnkitError):
    pass


class MagicMismatch(IdxFormatError):
    """IDX header does not start with two zero bytes, or unknown element kind."""


class Truncated(IdxFormatError):
    """IDX payload is shorter than the header promises."""


class TrailingBytes(IdxFormatError):
    """IDX payload is longer than the header promises."""


class CountMismatch(SnnkitError):
    """Image count and label count disagree."""


# --- ANN engine ---

class ShapeMismatch(SnnkitError):
    pass


class MissingCache(SnnkitError):
    """Backward called without a preceding forward in train mode."""


class Divergence(SnnkitError):
    """Training loss became non-finite."""


class EmptyDataset(SnnkitError):
    pass


# --- spike encoding ---

class RateOverflow(SnnkitError):
    """Per-step spike probability v * lambda_max * dt exceeds 1."""


class PathOutOfBounds(SnnkitError):
    """Saccade displacement pushes the sensor window off the padded canvas."""


# --- neuron dynamics ---

class UnstableTimestep(SnnkitError):
    """Forward-Euler step dt >= C_m * R_m for a leaky neuron."""


class LengthMismatch(SnnkitError):
    pass


# --- conversion ---

class OrphanBatchNorm(SnnkitError):
    """batch_norm with no conv/dense layer immediately before it."""


class DegenerateScale(SnnkitError):
    """A layer's activation percentile is <= 0; nothing to normalize against."""


class NonCompliantTopology(SnnkitError):
    """Network still contains layers with no spiking equivalent."""


# --- simulation ---

class HorizonMismatch(SnnkitError):
    pass


class LayerNotRecorded(SnnkitError):
    pass
