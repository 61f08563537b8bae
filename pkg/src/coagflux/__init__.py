"""Self-similar profiles of the coagulation equation with constant flux from the origin."""
__version__ = "0.1.0"
