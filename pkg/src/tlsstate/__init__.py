"""Protocol state fuzzing of TLS implementations."""

__version__ = "0.1.0"
