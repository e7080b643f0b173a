"""Sequential-task training, representation probes and the frozen-feature model of forgetting."""

__version__ = "0.1.0"
