"""Desk-scale simulator of hierarchically federated region-learning.

Partitions spatially distributed vehicles into regions by a combined
spatial/label-distribution distance, then runs a three-tier personalized
federated training loop with hypernetwork-generated mask vectors and
penalty-weighted intra-region aggregation.
"""

__version__ = "0.1.0"
