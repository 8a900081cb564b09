"""Self-supervised layered scene-text segmentation.

A crop around each polygon text region is decomposed into a text layer and
a background layer by an encoder / region-query / slot-binding / decoder
pipeline trained purely from reconstruction, mask-entropy, and
background-replacement consistency signals.
"""

from layerseg.errors import TrainingError, ValidationError

__version__ = "0.1.0"

__all__ = ["ValidationError", "TrainingError", "__version__"]
