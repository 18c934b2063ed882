"""Standard Bangla to regional dialect translation toolkit."""

__version__ = "0.1.0"
