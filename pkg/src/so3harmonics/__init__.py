"""Frequency-domain 3D rotation estimation toolkit.

Rotations are encoded as flattened stacks of real Wigner blocks
(harmonic vectors), predicted by a small SO(3)-equivariant spectral
pipeline, and decoded by querying precomputed SO(3) grids.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as kernel_backend  # noqa: F401
