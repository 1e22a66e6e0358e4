"""Self-attention feedback-gain policies for distributed multi-team dynamic games."""

__version__ = "0.1.0"
