"""Certified upper bounds on restoration and topological entropy.

A constant metric is found by LMI feasibility on a simplicial grid, vertex
eigenvalue bounds are turned into a linear program for a CPA Lyapunov-type
function, and the optimal constant Q yields the bound Q / (2 ln 2).
"""

__version__ = "0.1.0"
