"""Exception types shared across the toolkit."""


class EigenCoinError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(EigenCoinError, ValueError):
    """An argument or configuration value violates its documented contract."""


class DimensionError(EigenCoinError, ValueError):
    """Operands have incompatible shapes or lengths."""


class SegmentationFailureError(EigenCoinError):
    """Coin segmentation produced no usable foreground component."""

    def __init__(self, stage: str, message: str = ""):
        self.stage = stage
        super().__init__(message or f"segmentation failed at stage '{stage}'")


class InvalidDatasetError(EigenCoinError, ValueError):
    """A dataset or its manifest is structurally unusable."""


class DatasetLoadError(EigenCoinError):
    """An image file or manifest could not be read or decoded."""


class PredictionFailureError(EigenCoinError):
    """Feature extraction failed while classifying one item."""

    def __init__(self, stage: str, message: str = ""):
        self.stage = stage
        super().__init__(message or f"prediction failed at stage '{stage}'")


class UndefinedRateError(EigenCoinError, ValueError):
    """A per-class rate has an empty denominator."""


class ModelFormatError(EigenCoinError):
    """A persisted model file is malformed or inconsistent."""
