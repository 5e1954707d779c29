"""Multi-view graph representation learning with an information-bottleneck
teacher, disentangled invariant/redundant students, and cross-domain
adaptation, plus exact discrete-probability oracles."""

__version__ = "0.1.0"
