"""Exception hierarchy shared by the tariff toolkit modules."""
from typing import Optional


class TariffToolkitError(Exception):
    """Base class for every error raised by the toolkit."""


class DimensionError(TariffToolkitError):
    """Raised when tensor or array shapes do not line up."""


class UsageError(TariffToolkitError):
    """Raised when an API is called in a state it does not support."""


class ConfigurationError(TariffToolkitError):
    """Raised for invalid ranges, config values or unknown model variants."""


class CurationError(TariffToolkitError):
    """Raised when a distinct historical profile set cannot be produced."""


class MissingGradientError(TariffToolkitError):
    """Raised by the optimizer when a parameter has no gradient.

    Attributes:
        name: Name of the parameter lacking a gradient.
    """

    def __init__(self, name: str) -> None:
        super().__init__(f"parameter '{name}' has no gradient; run backward() first")
        self.name = name


class DivergenceError(TariffToolkitError):
    """Raised when the training loss stops being finite.

    Attributes:
        epoch: Epoch in which the loss diverged.
        batch: Batch index within the epoch.
        last_finite_loss: Last finite batch loss seen, if any.
    """

    def __init__(self, epoch: int, batch: int, last_finite_loss: Optional[float]) -> None:
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch} "
            f"(last finite loss: {last_finite_loss})"
        )
        self.epoch = epoch
        self.batch = batch
        self.last_finite_loss = last_finite_loss


class MissingArtifactError(TariffToolkitError):
    """Raised when an expected dataset or checkpoint file is absent.

    Attributes:
        path: The path that was expected to exist.
    """

    def __init__(self, what: str, path: str) -> None:
        super().__init__(f"missing {what}: expected at {path}")
        self.path = path


class CorruptArtifactError(TariffToolkitError):
    """Raised when a dataset or checkpoint file exists but cannot be parsed.

    Attributes:
        path: The unreadable file.
    """

    def __init__(self, what: str, path: str, reason: str) -> None:
        super().__init__(f"unreadable {what} at {path}: {reason}")
        self.path = path
