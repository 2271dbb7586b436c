"""Affine group equivariant convolutional networks on GL+(2) and SL(2).

The package splits into:

- ``autodiff``: dense float64 tensors with reverse-mode differentiation
- ``linalg``: closed-form 2x2 symmetric/SPD/rotation matrix routines
- ``groups``: group element types, polar/Cartan decomposition maps,
  Lie-algebra coordinates in an orthonormal basis
- ``sampling``: product samplers for the invariant measure plus statistical
  verifiers (uniformity, factor independence, invariant integration)
- ``nets``: sinusoidal MLP kernels, Monte Carlo lifting and group
  cross-correlation layers, the invariant classifier
- ``data`` / ``training``: IDX ingestion, affine/homography perturbations,
  training and evaluation loops
- ``cli``: the ``cartanconv`` command with verification suites
"""

__version__ = "0.1.0"
