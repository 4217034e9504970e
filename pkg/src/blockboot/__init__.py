"""Block bootstrap inference for irregularly spaced spatial regression data."""

__version__ = "0.1.0"

from .bootstrap import (
    BlockGeometry,
    BootstrapOutput,
    BootstrapPlan,
    Resample,
    build_geometry,
    draw_blocks,
    dssbb_mean_variance,
    run_bootstrap,
)
from .designs import NormalMixtureDesign, StripDesign, UniformDesign, draw_sites
from .field import CovarianceModel, simulate
from .geometry import (
    BlockPartition,
    Region,
    SiteIndex,
    TemplateIndexSet,
    build_site_index,
    partition,
    scale_region,
    sites_in_translate,
    template_positions,
)
from .regression import Dataset, FitResult, Score, WeightSpec, eval_weights, fit
from .selection import SelectionConfig, select_block_size
from .streams import substream
from .targets import sigma_c_mean, sigma_infinity_sq

__all__ = [
    "__version__",
    "BlockGeometry",
    "BlockPartition",
    "BootstrapOutput",
    "BootstrapPlan",
    "CovarianceModel",
    "Dataset",
    "FitResult",
    "NormalMixtureDesign",
    "Region",
    "Resample",
    "Score",
    "SelectionConfig",
    "SiteIndex",
    "StripDesign",
    "TemplateIndexSet",
    "UniformDesign",
    "WeightSpec",
    "build_geometry",
    "build_site_index",
    "draw_blocks",
    "draw_sites",
    "dssbb_mean_variance",
    "eval_weights",
    "fit",
    "partition",
    "run_bootstrap",
    "scale_region",
    "select_block_size",
    "sigma_c_mean",
    "sigma_infinity_sq",
    "simulate",
    "sites_in_translate",
    "substream",
    "template_positions",
]
