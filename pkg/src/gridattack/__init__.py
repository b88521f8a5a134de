"""Design and closed-loop evaluation of false-data-injection attacks against an N-1 secure EMS."""

__version__ = "0.1.0"
