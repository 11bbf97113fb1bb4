"""Adversarial co-evolution of instance generators and heuristic programs."""
