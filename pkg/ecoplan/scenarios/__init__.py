"""Shipped fixture scenarios."""
