"""M-Fed: multi-task federated learning with a shared encoder, simulated deterministically."""

__version__ = "0.1.0"
