"""Variational relative pose and velocity estimation on SE(3)."""
