"""Simulator and analysis toolkit for mid-point time-bin qubit teleportation.

Subpackage overview:

- ``qubit``     exact single-qubit algebra for time-bin qubits
- ``fock``      brute-force truncated-Fock-space oracle (linear optics + threshold detection)
- ``gaussian``  Gaussian-state click calculus used by the fast model
- ``model``     fast analytic photon-statistics model (validated against ``fock``)
- ``netsim``    discrete-event simulation of the three-node deployment
- ``feedback``  HOM-timing and polarization stabilization controllers
- ``analysis``  tomography, decoy-state bounds, visibility fits, Monte-Carlo errors
- ``config``    experiment configuration (schema, defaults, hashing)
- ``cli``       batch runner: simulate / analyze / homscan / lockdemo
"""

__version__ = "0.1.0"
