"""Self-supervised phase unwrapping for single-camera fringe projection.

Subpackages and modules:

- ``phasecore``: pattern generation, N-step phase and modulation extraction
- ``tpu``: dual- and multi-frequency temporal phase unwrapping
- ``sim``: synthetic camera/projector system and dataset generation
- ``selfsup``: soft fringe order, phase re-synthesis and the two-term loss
- ``nn``: reverse-mode autodiff, the small UNet, Adam and the trainer
- ``evaluation``: masks, metrics, sphere fitting and the ablation harness
- ``cli``: the ``fpplab`` command line
"""

from .errors import DataError, FPPError, InvalidArgument, InvalidState, NumericFailure

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "FPPError",
    "InvalidArgument",
    "InvalidState",
    "NumericFailure",
    "__version__",
]
