"""Taxi destination prediction from trajectory prefixes.

Data pipeline for the Porto taxi corpus, mean-shift clustering of training
destinations, embedding MLP / recurrent / memory-network models over a
tape-based autodiff core, SGD-with-momentum training, and Haversine
evaluation.
"""

__version__ = "0.1.0"
