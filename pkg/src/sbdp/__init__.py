"""Spatial birth-death processes with local competition on a torus.

Submodules: ``kernels``, ``pointset``, ``dynamics``, ``estimators``,
``hierarchy``, ``theory``, ``config``, ``experiments`` and ``cli``.
"""
__version__ = "0.1.0"
