"""Finite-element toolkit for box-constrained optimal control of a
quasilinear elliptic equation whose coefficient has a kink, with level-set
geometry for its second-order conditions."""

__version__ = "0.1.0"
