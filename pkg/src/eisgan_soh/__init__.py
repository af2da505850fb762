"""Battery capacity estimation from impedance spectra.

Learns latent representations of EIS curves with an information-maximizing
GAN and maps them to cell capacity with Gaussian process regression.
"""

__version__ = "0.1.0"
