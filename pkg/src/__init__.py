"""larex: normalized linear autoencoder recommenders"""

__version__ = "1.0.0"
