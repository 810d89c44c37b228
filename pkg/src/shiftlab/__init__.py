"""Profit-shifting estimates from country-by-country reporting panels."""

__version__ = "0.1.0"
