"""Pseudospectral solver and verification lab for the logarithmic Cahn-Hilliard equation."""
