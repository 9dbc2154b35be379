"""Desk-scale face matting laboratory.

Synthesizes occluded-face clip datasets, trains a teacher network with joint
alpha/uncertainty estimation, distills it into a student via
uncertainty-guided supervision, evaluates with the standard matting metric
protocol, and composites occlusion-aware face filters.
"""

__version__ = "0.1.0"
