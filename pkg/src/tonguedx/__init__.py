"""Tongue-image diagnostic pipeline.

Registration to a reference model, margin crop and 5-region decomposition,
per-region neural feature extraction, composite fusion, mutual-information
layer selection, and SVM/CNN classification with clinical metrics.
"""

__version__ = "0.1.0"
