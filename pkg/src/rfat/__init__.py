"""rfat: digital-twin simulator and multi-agent control for a tunable RF receiver."""

__version__ = "0.1.0"
