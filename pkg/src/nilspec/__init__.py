"""Numerical harmonic analysis on step-two nilpotent groups and the Heisenberg nilmanifold.

Submodules
----------
lie          step-two algebras, group law, dilations, lattices
dual         block form of ``B(lambda)``, strata, eta and its gradient
hermite      truncated Schrodinger-type representations in the Hermite basis
symbols      kernel symbols, group Fourier transform, semiclassical quantization
nilmanifold  sub-Laplacian on ``Z^3 \\ H1``, spectrum and eigenfunction sequences
measures     finitely supported operator-valued measures and their flows
verify       the numbered acceptance checks
cli          the ``nilspec`` command

The package root is kept import-light so that ``NILSPEC_THREADS`` can be
applied before numpy loads its BLAS.
"""

__version__ = "0.1.0"
