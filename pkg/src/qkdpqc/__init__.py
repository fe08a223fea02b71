"""Simulated QKD (BB84, E91) combined with post-quantum KEM and signatures.

Modules: ``qsim`` statevector simulator, ``qkd`` protocols, ``pqcprov``
primitive providers, ``hybridkx`` hybrid key exchange, ``hybridsig`` hybrid
certificates, ``ranval`` entropy validation and ``cli``.
"""
from __future__ import annotations

__version__ = "0.1.0"
