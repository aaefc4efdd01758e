"""Real-time-style hair shading with SH near-field transmittance and SH far-field lighting."""

__version__ = "0.1.0"

from .farfield import (EnvironmentMap, EnvironmentSH, PhaseSHLUT, bake_phase_sh_lut,  # noqa: E402
                       project_envmap, shade_far, validate_trt_factorization)
from .fiber import (AzimuthalLUT, FiberMaterial, Mode, bake_azimuthal_lut, eval_phase,  # noqa: E402
                    fit_g)
from .geometry import HairGeometry  # noqa: E402
from .reference import quadrature_shade, trace_reference  # noqa: E402
from .render import (Camera, FrameBuffer, Light, RenderSettings, Scene, bench,  # noqa: E402
                     compare_images, kajiya_kay_shade, shade_direct, shade_point)
from .shmath import SHVector  # noqa: E402
from .transmittance import (VertexTransmittanceSH, bake_transmittance, biased_V,  # noqa: E402
                            eval_V, project_to_sh)

__all__ = [
    "AzimuthalLUT", "Camera", "EnvironmentMap", "EnvironmentSH", "FiberMaterial", "FrameBuffer",
    "HairGeometry", "Light", "Mode", "PhaseSHLUT", "RenderSettings", "SHVector", "Scene",
    "VertexTransmittanceSH", "bake_azimuthal_lut", "bake_phase_sh_lut", "bake_transmittance",
    "bench", "biased_V", "compare_images", "eval_V", "eval_phase", "fit_g", "kajiya_kay_shade",
    "project_envmap", "project_to_sh", "quadrature_shade", "shade_direct", "shade_far",
    "shade_point", "trace_reference", "validate_trt_factorization",
]
