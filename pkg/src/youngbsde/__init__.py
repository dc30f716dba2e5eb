"""Numerics for backward SDEs driven by space-time Holder fields.

Subpackages cover path norms, driver-field synthesis (fractional Brownian
sheets, mollification), sewing-lemma integration, linear Young ODE flows,
forward diffusion simulation, the least-squares Monte Carlo backward solver,
finite-difference PDE cross-checks, and a config-driven experiment CLI.
"""

__version__ = "0.1.0"
