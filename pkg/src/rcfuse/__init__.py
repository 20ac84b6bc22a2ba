"""Radar-camera 3D object detection at desk scale.

Pipeline: synthetic scene generation -> visual backbone + frozen foundation
adapter -> radar sparse/dense encoders -> sequential two-stage query decoder,
with set-based training, nuScenes-style metrics, and a modality ablation
harness.
"""

__version__ = "0.1.0"
