"""Online covariance estimation for Polyak-Ruppert averaged SGD.

Streaming batch-means and trajectory-regression estimators of the limiting
covariance of the averaged iterate, plus the two-point lower-bound lab,
confidence ellipsoids, and a replicated experiment harness.
"""

__version__ = "0.1.0"
