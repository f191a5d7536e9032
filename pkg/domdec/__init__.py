"""
Entropic optimal transport by domain decomposition.
"""

__version__ = "1.0.0"
