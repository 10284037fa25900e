"""Resource-efficient Bayesian network classifiers and small DNNs: quantization-aware
training, size-aware TAN structure learning, and memory/operation budgeting."""

__version__ = "0.1.0"
