"""EDMB: a desk-scale multi-granularity edge detector.

Bidirectional selective state-space encoders over image patches, a
learnable-Gaussian-distribution decoder, ELBO-supervised two-stage training,
granularity-controlled edge sampling, and an ODS/OIS evaluation harness,
all on a self-contained numpy autodiff core.
"""

from .model import EdgeDetector, ModelConfig, build_model

__version__ = "0.1.0"
__all__ = ["EdgeDetector", "ModelConfig", "build_model", "__version__"]
