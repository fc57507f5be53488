"""Dynamic stochastic block model: generation, detectability theory, BP and spectral inference."""
