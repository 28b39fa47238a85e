"""
SMP Beam Simulator - Main Package
"""

from modules import __version__  # noqa: F401
