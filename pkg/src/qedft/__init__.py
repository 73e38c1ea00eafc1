"""Classical and simulated-quantum Kohn-Sham DFT toolkit."""

__version__ = "0.1.0"
