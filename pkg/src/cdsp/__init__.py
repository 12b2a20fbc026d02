"""Class-driven scribble promotion: losses, rectification, distance maps and a desk-scale harness."""

from cdsp._jit import backend

__version__ = "0.1.0"
