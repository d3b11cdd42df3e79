"""Discrete-event simulator and attack-cost calculator for BFT networks that
separate transaction ordering from transaction execution."""

__version__ = "0.1.0"
