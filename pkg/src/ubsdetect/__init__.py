"""Insider-threat detection from activity logs.

Pipeline: parse CERT-style CSV logs into per-user sessions with 35-value
feature vectors, stack them into per-user [days x sessions x features]
tensors, train reconstruction models on benign users only, and flag
anomalous users with unsupervised outlier detectors over the per-user
reconstruction-error summaries.
"""

__version__ = "0.1.0"
