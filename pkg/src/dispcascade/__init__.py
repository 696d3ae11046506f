"""Dispersive one-way quantum channels modelled by a matched filter cavity
inside a cascaded Lindblad master equation."""

__version__ = "0.1.0"
