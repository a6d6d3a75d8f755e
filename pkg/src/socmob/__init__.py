"""Intergenerational mobility estimates from survey microdata."""

__version__ = "0.1.0"
