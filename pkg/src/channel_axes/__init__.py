"""Post-hoc channel-information analysis for convolutional feature maps.

The package estimates, per channel, how much of the layer's input a channel
captures and how much its peers duplicate it (the local axis), and how much
task-relevant information it carries alone or jointly with peers (the target
axis). On top of those per-channel quantities it builds replaceability hulls,
redundancy/synergy graphs, lesion simulations, training-dynamics diagnostics,
and a FLOPs-matched evaluation harness for channel-pruning scores.

Everything operates on "bundles": directories holding a manifest plus raw
float32 tensors exported from a model (or synthesized from a linear-Gaussian
generator for controlled experiments).
"""

__version__ = "0.1.0"

from .errors import BundleValidationError, DegenerateDataError

__all__ = ["BundleValidationError", "DegenerateDataError", "__version__"]
