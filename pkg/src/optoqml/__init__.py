"""Optical-descriptor classification of pristine vs Er-doped CaF2 with classical
and quantum kernel / variational models on a simulated backend."""

__version__ = "0.1.0"

__all__ = ["spectra", "corpus", "features", "svm", "qsim", "qkernel", "qnn", "metrics", "cli", "__version__"]
