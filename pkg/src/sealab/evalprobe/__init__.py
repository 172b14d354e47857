"""Auxiliary-accuracy tables, frozen-feature probes, and task ablations."""
