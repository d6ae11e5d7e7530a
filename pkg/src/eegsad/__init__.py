"""EEG band-energy features, scalp-grid tensors and from-scratch classifiers
for subject-level social-anxiety classification."""

__version__ = "0.1.0"
