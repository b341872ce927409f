"""Two-view contrastive co-training (InfoNCE, UberNCE, CoCLR) at desk scale."""

__version__ = "0.1.0"
