"""Adaptive homothetic tube MPC for linear systems with uncertain affine parameters.

Modules: ``geometry`` (polytopes), ``qp`` (convex QP/LP), ``model`` (system and
constraints), ``estimator`` (set membership and point estimates), ``tube_mpc``
(tube sets and the optimal control problem), ``certify`` (stability
certificates), ``perf_bound`` (a priori cost bounds) and ``harness``
(configuration, simulation, sweeps and the ``atmpc`` CLI).
"""

__version__ = "0.1.0"
