"""Numerical workbench for Riccati comparison and measure contraction on Sasakian model spaces."""

from .models import SUB, CurvatureProfile, SasakianModel, build_heisenberg, connection, curvature_check, profile_matrix

__all__ = [
    "SUB",
    "CurvatureProfile",
    "SasakianModel",
    "build_heisenberg",
    "connection",
    "curvature_check",
    "profile_matrix",
]
