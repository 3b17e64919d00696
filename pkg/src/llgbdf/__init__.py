"""Semi-implicit BDF projection integrators for the Landau-Lifshitz-Gilbert equation."""

__version__ = "0.1.0"
