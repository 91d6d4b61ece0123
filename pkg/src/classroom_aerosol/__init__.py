"""Desk-scale classroom respiratory-droplet transport and infection-risk simulator."""

__version__ = "0.1.0"
