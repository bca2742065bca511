"""Mixed-integer potential game for coordinating a PEV fleet at a shared charging station."""

__version__ = "0.1.0"
