"""rslicer: task-agnostic system-state embeddings from metrics, traces, and
logs, with state-conditioned models for anomaly detection, failure
localization, and failure classification.
"""

__version__ = "0.1.0"
