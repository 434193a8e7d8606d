"""Reshare-network cloning and SEI misinformation cascade simulation."""
__version__ = "0.1.0"
