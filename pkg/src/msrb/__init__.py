"""Reduced mixed multiscale FE bases and sparse surrogates for parametric
elliptic problems, with a two-phase flow driver on the reduced velocity
model."""

__version__ = "0.1.0"
