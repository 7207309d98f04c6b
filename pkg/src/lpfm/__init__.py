"""Laplacian-attention transformer lab."""
