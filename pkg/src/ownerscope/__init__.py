"""Code-ownership and time/release metrics for vulnerability studies."""

__version__ = "0.1.0"
