"""Hierarchical two-stream video anomaly detection.

Memory-augmented prediction blocks are chained through residual
connections into stacks and streams; per-frame anomaly scores come from
prediction PSNR. Stacks can be masked at evaluation time to change the
tolerated event classes without retraining.
"""

__version__ = "0.1.0"
