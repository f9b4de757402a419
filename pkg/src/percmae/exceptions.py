class PercmaeError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(PercmaeError):
    """Invalid configuration, incompatible shapes, or bad input layout."""


class CheckpointError(PercmaeError):
    """Corrupt checkpoint file or mismatch against the target model."""


class NonFiniteLossError(PercmaeError):
    """A loss term became NaN/Inf during training.

    Carries the name of the offending term and, when available, the path of
    the last good checkpoint written before the abort.
    """

    def __init__(self, term: str, checkpoint_path=None):
        self.term = term
        self.checkpoint_path = checkpoint_path
        detail = f"non-finite value in loss term '{term}'"
        if checkpoint_path is not None:
            detail += f" (last good checkpoint: {checkpoint_path})"
        super().__init__(detail)
