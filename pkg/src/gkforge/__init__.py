"""Chart-local verification of generalized Kähler structures."""

__version__ = "0.1.0"
