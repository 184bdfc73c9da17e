"""Training entry points, one module per layer of the stack."""
