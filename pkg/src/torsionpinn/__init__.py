"""Physics-informed networks for torsion of shafts and prismatic bars."""

__version__ = "0.1.0"
