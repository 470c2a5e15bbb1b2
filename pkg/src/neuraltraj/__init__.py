"""Neural-trajectory pipeline on a verifiable tabletop simulator."""
__version__ = "0.2.0"
