"""One-shot clustered federated learning."""
