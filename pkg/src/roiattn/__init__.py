"""RoI attention classification head with rotary 2D positions and repulsive contrastive training."""

__version__ = "0.1.0"
