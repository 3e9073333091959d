"""qlangevin - quantum Brownian motion simulator and verification harness."""

__version__ = "0.1.0"
