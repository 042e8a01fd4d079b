"""Global tone-curve harmonization for cross-vendor grayscale imaging.

An iterative quadratic curve, predicted per image by a small conv net, maps
acquisition-shifted images back toward a reference domain; training is driven
by a frozen task classifier plus a perceptual appearance term. Everything
(operators, optimizer, data, metrics) is self-contained.
"""

from .curve import CurveCoefficients, apply_curve, fit_curve_to_target
from .errors import ConfigError, DataError, GdceError, NumericalError
from .image import RawImage, UnitImage, Window, load_image, load_manifest, save_image
from .models import GdceConfig, build_discriminator, build_extractor, build_gdce, enhance
from .synth import ShiftProfile, SynthSpec, apply_shift, generate_dataset, make_domain_pair
from .training import TrainConfig, train_discriminator, train_gdce

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CurveCoefficients",
    "DataError",
    "GdceConfig",
    "GdceError",
    "NumericalError",
    "RawImage",
    "ShiftProfile",
    "SynthSpec",
    "TrainConfig",
    "UnitImage",
    "Window",
    "apply_curve",
    "apply_shift",
    "build_discriminator",
    "build_extractor",
    "build_gdce",
    "enhance",
    "fit_curve_to_target",
    "generate_dataset",
    "load_image",
    "load_manifest",
    "make_domain_pair",
    "save_image",
    "train_discriminator",
    "train_gdce",
    "__version__",
]
