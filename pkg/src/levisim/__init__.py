"""Simulation and analysis of electrostatic force compensation for a levitated charged nanoparticle."""
__version__ = "0.1.0"
