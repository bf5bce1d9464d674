"""Camera-LiDAR cross-modality gait recognition, desk scale."""

__version__ = "0.1.0"
