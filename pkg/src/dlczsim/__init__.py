"""Monte Carlo simulator for gradient-controlled dephasing and rephasing
of single collective spin excitations in a cold-atom DLCZ quantum memory."""

__version__ = "0.1.0"
