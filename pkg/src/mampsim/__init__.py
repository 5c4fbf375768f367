"""mampsim: coded MIMO multicarrier link simulation and analysis.

Subpackages cover channel generation, OFDM/OTFS/AFDM transforms, the
memory-AMP family of iterative receivers, state-evolution prediction,
I-MMSE achievable-rate computation, and LDPC code design against the
receiver's transfer functions.
"""

__version__ = "0.1.0"
