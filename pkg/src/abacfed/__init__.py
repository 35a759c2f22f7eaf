"""Multi-domain attribute-based access control with decentralized PIPs."""

__version__ = "0.1.0"
