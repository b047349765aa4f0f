"""Finite elements for pure traction problems in linear elasticity."""
