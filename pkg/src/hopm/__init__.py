"""Software twin of a hybrid dc/rf optically-pumped magnetometer."""

__version__ = "0.1.0"
