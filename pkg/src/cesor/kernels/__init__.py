"""Compiled rollout kernels with pure-numpy fallbacks."""
