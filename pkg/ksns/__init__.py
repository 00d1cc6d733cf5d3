"""
KSNS Simulation Package
Regularized Keller-Segel-Navier-Stokes solver with a priori estimate monitors
"""

__version__ = "1.0.0"
__author__ = "KSNS Team"
