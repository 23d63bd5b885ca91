"""Numerical light ray transforms on stationary space-times.

Submodules:

* :mod:`lightray.geometry` -- charts, metrics, symmetric tensor algebra
* :mod:`lightray.stationary` -- stationary metrics and their conformal reduction
* :mod:`lightray.rays` -- null geodesics, G-curves, boundary exit, foliation checks
* :mod:`lightray.transforms` -- light ray, geodesic and moment transforms
* :mod:`lightray.decomposition` -- Helmholtz and trace-free Helmholtz solvers
* :mod:`lightray.reconstruction` -- scalar reconstruction from slice data
* :mod:`lightray.cli` -- the ``lightray`` command

The package namespace is kept import-light so that the command line can
set thread limits before numpy is loaded.
"""

__version__ = "0.1.0"
