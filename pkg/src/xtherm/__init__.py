"""Thermal network extraction and electro-thermal circuit simulation for nanosheet device pairs."""

__version__ = "0.1.0"
