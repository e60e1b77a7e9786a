"""Semiflexible-polymer kinetics in a half-plane.

Subpackages:

* ``core``       -- grids, fields, mass ledger
* ``specfun``    -- confluent hypergeometric functions and the analytic
                    comparison profiles (self-similar super/subsolutions)
* ``chain_mc``   -- discrete-chain Monte Carlo with the energy-minimizing
                    wall rule
* ``kinetic``    -- forward finite-volume / semi-Lagrangian solver for the
                    trapping initial-boundary-value problem
* ``adjoint``    -- mild-solution solvers for the forward adjoint problems,
                    resolvent, and duality checks
* ``stationary`` -- steady states of the reduced adjoint equation and the
                    long-chain verifications
* ``harness``    -- experiment runner, configuration, CLI
"""

__version__ = "0.1.0"
