"""Isogeometric boundary elements for shape uncertainty in acoustic scattering.

Subpackages and modules
-----------------------
geometry     multipatch NURBS surfaces, built-in shapes, patch files, VTK export
randomfield  surface Karhunen-Loeve expansions and shape sampling
bem          Galerkin CFIE for sound-soft scattering and potential evaluation
interface    Cauchy data on an artificial interface and moment transport
quadrature   Halton, Gauss-Legendre and anisotropic sparse-grid rules
mlq          multilevel quadrature for means and second moments
bayes        Bayesian shape inversion with a multilevel ratio estimator
cli          command-line pipeline
"""

__version__ = "0.1.0"
