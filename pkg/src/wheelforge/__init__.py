"""Generative wheel design studio.

End-to-end pipeline: 2D generative topology optimization, convolutional
autoencoder latent space, DOE in latent space, voxel CAD construction,
free-free modal FEM, transfer-learning surrogate, and visual analysis.
"""

__version__ = "0.1.0"
