"""Evolutionary synthesis of sparse neural networks."""
