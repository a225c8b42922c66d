"""Two-stage efficient sketch retrieval: distilled encoders plus an adaptive
canvas-size selector, with an analytical compute profiler."""

__version__ = "0.1.0"
