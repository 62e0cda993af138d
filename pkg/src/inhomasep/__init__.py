"""Inhomogeneous ASEP on a torus, PAM semigroup kernels, and an SHE solver.

Subpackages are organized by layer: torus geometry, quenched environments,
the particle system and its transform, random-walk kernels, semigroups
discrete and continuum, the mild SPDE solver, and the experiment layer.
"""

__version__ = "0.1.0"
