"""Synthetic visual reasoning tasks, a numpy training stack, and analysis tools.

The package splits into five parts:

- ``tasks`` and ``geometry``: 23 binary classification rules over scenes of
  closed contours, with constructive samplers and pure verifiers.
- ``raster`` and ``datasets``: deterministic rasterization, a packed binary
  dataset format with manifests, and seeded split generation.
- ``nn``: dense layers with hand-written backward passes, a small residual
  CNN, spatial/feature self-attention, Adam, and gradient checking.
- ``training``: seeded training runs with restarts, shuffled-label
  pretraining, frozen-backbone finetuning, and attention placement sweeps.
- ``analysis``: task-space clustering, principal components, learning-curve
  slopes, and correlation statistics over accuracy matrices.
"""

__version__ = "0.1.0"
