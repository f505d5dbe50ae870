"""Gaussian isotropic fields on the sphere in the critical regime ``C_l ~ l^-4``.

Submodules
----------
specfun      Legendre functions, real harmonics, real Lambert W.
spectrum     Power spectra, covariance, canonical metric, rho.
field        Field samples, band sums, Gaussian factors, seed derivation.
spheregeom   Points, cap meshes, rho-balls, covering numbers.
asymptotics  Rate functions, regression fits, bound checks.
experiments  Small-ball Monte Carlo, conditional variance, Chung traces.
cli          The ``isoball`` command.
"""
__version__ = "0.1.0"

from ._backend import BACKEND, available_backends  # noqa: E402,F401
