"""Minimum-time toolkit for differential inclusions given by their Hamiltonian.

The package solves minimum time problems for dynamics xdot in F(x) specified
through the support function H(x, p) = sup_{v in F(x)} <p, v>, synthesizes
optimal trajectories by integrating the dual-arc characteristic system
backward from the target, cross-validates against a semi-Lagrangian grid
oracle, and verifies the structural properties tying the two together
(Hamiltonian constancy, supergradient propagation, sufficient optimality,
and the flow-out structure of the non-Lipschitz set).
"""

__version__ = "0.1.0"

from . import analysis, characteristics, dynamics, hjb, scenario, target  # noqa: F401
