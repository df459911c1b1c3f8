"""Rate-control simulation toolkit for real-time video over cellular."""

__version__ = "0.1.0"
