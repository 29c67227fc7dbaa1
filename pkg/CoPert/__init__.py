"""CoPert is a Python library that estimates average perturbation effects of
compositional (simplex-valued) covariates.

It provides the catalogue of binary and directional perturbations of the
simplex, their derivative-isolating reparametrizations, cross-fitted
semiparametric estimators with confidence intervals, and a simulation harness
that checks the coverage of those intervals.

"""
# For debugging purposes
__test_version__ = "0.1.0.post1"
# Version of package
__version__ = "0.1.0a1"
