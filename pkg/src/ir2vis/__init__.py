"""Infra-red to visible satellite image translation at desk scale."""
__version__ = "0.1.0"
