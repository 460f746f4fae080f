"""bnn-evolve: float-free evolutionary training of fully binary neural networks."""

__version__ = "1.0.0"
