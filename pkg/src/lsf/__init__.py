"""Learning with selective forgetting at desk scale."""

__version__ = "0.1.0"
