"""Deformable 2-D image registration: learned warp fields, demons and phase correlation."""

__version__ = "0.1.0"
