"""Adversarial hardening of monocular depth estimation via view synthesis."""
