"""Particle simulation and diagnostics for the homogeneous Landau equation.

Modules
-------
kernels
    Raw and ball-mollified kernels ``a``, ``b``, ``sigma`` and empirical fields.
matrix3
    3x3 symmetric square roots and the optimal Gaussian coupling rotation.
particles
    Euler-Maruyama integration of the mean-field particle system.
perturbation
    Non-alignment geometry, anchor selection and the alignment-triggered noise.
coupling
    Optimal assignment, the exchangeable optimal coupling and coupled stepping.
metrics
    Wasserstein distances, blob norms, entropy and Fisher information estimates.
studies
    Experiment drivers behind the command line.
"""

import os

# numba's TBB layer is too old in common distributions and only warns
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
if "LANDAU_CHAOS_THREADS" in os.environ:
    os.environ.setdefault("NUMBA_NUM_THREADS", os.environ["LANDAU_CHAOS_THREADS"])

from .kernels import KernelParams  # noqa: E402

__all__ = ["KernelParams"]
__version__ = "0.1.0"
