"""Stein variational rare event estimation."""
