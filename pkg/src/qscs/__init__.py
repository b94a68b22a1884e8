"""Quantum-inspired secure and green supply-chain control lab."""
