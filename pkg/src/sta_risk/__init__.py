"""Side-aware spatio-temporal asymmetry risk prediction at desk scale."""

__version__ = "0.1.0"
