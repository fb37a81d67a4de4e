from .model import (
    INFINITE,
    Layer,
    LayerStack,
    MCResult,
    SimConfig,
    specular_reflectance,
)
from .engine import default_worker_count, simulate
from .lut import (
    ForwardLUT,
    build_default_lut,
    build_lut,
    default_axes,
    default_build_config,
    epidermis_dermis_template,
    load_lut,
    lut_from_bytes,
    lut_reflectance,
    lut_stderr,
    lut_to_bytes,
    save_lut,
    single_layer_template,
)

__all__ = [
    "INFINITE",
    "Layer",
    "LayerStack",
    "SimConfig",
    "MCResult",
    "specular_reflectance",
    "simulate",
    "default_worker_count",
    "ForwardLUT",
    "build_lut",
    "build_default_lut",
    "default_axes",
    "default_build_config",
    "single_layer_template",
    "epidermis_dermis_template",
    "lut_reflectance",
    "lut_stderr",
    "lut_to_bytes",
    "lut_from_bytes",
    "save_lut",
    "load_lut",
]
