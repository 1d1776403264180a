"""Motion-planning workbench for redundant serial manipulators: sampling-based
planners, a conditional trajectory diffusion generator, an evaluation harness,
and an HTTP service for the browser workbench."""

__version__ = "0.1.0"
