"""Divisible sandpile odometer laboratory on the discrete torus."""

__version__ = "0.1.0"
