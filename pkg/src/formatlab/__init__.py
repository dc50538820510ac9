"""Format-selection reinforcement learning laboratory.

Response-format parsing, the multi-term format reward with group-relative
advantages, a clipped token-level policy objective with an analytic
gradient, a synthetic task simulator, overthinking diagnostics and
format assignment for warm-start data.
"""

__version__ = "0.1.0"
