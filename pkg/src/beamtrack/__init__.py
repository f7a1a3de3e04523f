"""Desk-scale autonomous beam-alignment and channel-sounding simulator."""

__version__ = "0.1.0"
