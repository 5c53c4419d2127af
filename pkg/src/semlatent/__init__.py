"""Graph-edit-aware molecular latent spaces from SMILES."""

__version__ = "0.1.0"
