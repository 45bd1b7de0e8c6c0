"""Vision-only under-canopy MAV navigation simulator with occupancy submaps
and loop-closure-aware reference trajectory anchoring."""

__version__ = "0.1.0"
