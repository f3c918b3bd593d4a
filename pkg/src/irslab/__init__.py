"""Multi-IRS MISO downlink simulator with hierarchical multi-agent Q-mix learners."""

__version__ = "0.1.0"
