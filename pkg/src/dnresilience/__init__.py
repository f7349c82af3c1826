"""Resilience analysis of radial distribution networks under voltage sags and DG attacks."""
from .network import Network, LoadSpec, DgSpec, builtin_network, load_network, max_loss

__all__ = ["Network", "LoadSpec", "DgSpec", "builtin_network", "load_network", "max_loss"]
__version__ = "0.1.0"
