"""Finite-element solver and verification probes for transport-energy systems."""

from .mesh import (
    DIRICHLET,
    NEUMANN,
    BallQuery,
    Mesh,
    MeshError,
    ball_restriction,
    build_lshape,
    build_rectangle,
    dyadic_radii,
    read_mesh,
    reentrant_corner,
    refine_uniform,
    tag_boundary,
    write_mesh,
)

__all__ = [
    "DIRICHLET",
    "NEUMANN",
    "BallQuery",
    "Mesh",
    "MeshError",
    "ball_restriction",
    "build_lshape",
    "build_rectangle",
    "dyadic_radii",
    "read_mesh",
    "reentrant_corner",
    "refine_uniform",
    "tag_boundary",
    "write_mesh",
]
