"""Forward simulation, joint fitting and identifiability checks for the reversible two tissue compartment model."""

__version__ = "0.1.0"
