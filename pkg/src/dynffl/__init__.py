"""Dynamic field-free-line MPI: simulation, Radon decomposition, TV reconstruction."""

__version__ = "0.1.0"
