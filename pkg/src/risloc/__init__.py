"""Active RIS configuration design for uplink localization."""

__version__ = "0.1.0"
