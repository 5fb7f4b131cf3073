"""Multi-region histogram face verification with a resolution-detector frontend."""

__version__ = "0.1.0"
