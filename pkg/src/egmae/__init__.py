"""Entropy-guided masked autoencoding on numpy.

Subpackages:

- ``autodiff``: reverse-mode differentiation engine and its op set
- ``entropy``: patch grids, per-patch entropy, entropy-scaled corruption
- ``data``: PNM images, manifests, resizing, augmentation, batching
- ``models``: encoder / decoder / classifier and checkpoint files
- ``training``: optimizer, schedules, pretraining and fine-tuning loops
- ``evaluation``: classification metrics, ensembling, report files
- ``synthetic``: seeded procedural corpora for desk-scale experiments
- ``cli``: the ``egmae`` command
"""

__version__ = "0.1.0"
