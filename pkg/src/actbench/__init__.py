"""Action-recognition benchmark over SPD matrices, linear subspaces, GMMs and Fisher vectors."""

__version__ = "0.1.0"
