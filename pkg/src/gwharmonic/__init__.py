"""Harmonic measure on critical Galton-Watson trees.

Simulation library for the universal exponent governing the concentration
of harmonic measure at generation n of a large critical Galton-Watson tree,
built from three independent pieces:

* exact electrical-network computations on reduced discrete trees,
* a particle-population solver for the limiting conductance law on [1, inf),
* a sampler for the continuum reduced tree with conductance closure.
"""

__version__ = "0.1.0"
