"""
SMP Beam Simulator - Modules Package
"""

__version__ = "1.0.0"
