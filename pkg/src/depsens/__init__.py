"""Variance-based sensitivity analysis for models with dependent inputs."""

__version__ = "0.1.0"
