"""Physics-informed network for the transient temperature field of a laser track,
with a finite-difference reference solver to check it against."""

__version__ = "0.1.0"
