"""Convex-relaxation bounds, certified training and diagnostics for ReLU networks."""
from .bounds import LayerBounds, RelaxationKind, bounds, parse_kind, relu_relax
from .network import Network, build_network, load_network, net_forward, save_network

__all__ = [
    "LayerBounds", "Network", "RelaxationKind", "bounds", "build_network",
    "load_network", "net_forward", "parse_kind", "relu_relax", "save_network",
]
