"""Monte Carlo lab for halting and deflation times of the Toda eigenvalue algorithm on random matrices."""

__version__ = "0.1.0"
