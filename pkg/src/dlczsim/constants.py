"""Physical constants used throughout the simulator.

All values are SI.  This is the single place where fundamental constants
and fixed atomic properties live; everything tunable belongs in the run
configuration instead.
"""

# Boltzmann constant, J/K (exact, 2019 SI)
K_BOLTZMANN = 1.380649e-23

# Atomic mass unit, kg (CODATA 2018)
ATOMIC_MASS_UNIT = 1.66053906660e-27

# 87Rb atomic mass, kg
RB87_MASS = 86.909180527 * ATOMIC_MASS_UNIT

# D2-line wavelength used for both write and read photons, m
D2_WAVELENGTH = 780.241e-9

# Bohr magneton over hbar, rad/(s T).  Only used as a plausibility scale
# for the effective Zeeman coefficient; never enters the simulation.
BOHR_MAGNETON_OVER_HBAR = 8.7941e10
