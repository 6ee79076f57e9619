"""Lightweight vision backbone on selective state-space scans.

Feature maps are mixed globally by a selective scan over atrous offset
groups (each pixel visited once per layer) fused with a local convolution
branch, and refined by squeeze-excite inverted residuals in the later
stages.  Includes an analytic cost profiler, verification oracles and a
small trainer, all on a self-contained numpy autodiff core.
"""

from .blocks import EvssBlock, InvertedResidual, stage_rule
from .model import Model, ModelSpec, VARIANTS, build_model, resolve_variant
from .scan import ScanPlan, build_plan, es2d, gather, offset_formula, scatter, ss2d
from .ssm import (DiscreteParams, SsmParams, apply_ssm, conv_kernel_form,
                  count_steps, discretize, init_ssm_params, select_params,
                  selective_scan)
from .tensor import Tensor, no_grad, set_debug_checks, set_precision

__version__ = "0.1.0"

__all__ = [
    "Tensor", "no_grad", "set_precision", "set_debug_checks",
    "SsmParams", "DiscreteParams", "init_ssm_params", "discretize",
    "select_params", "selective_scan", "apply_ssm", "conv_kernel_form",
    "count_steps",
    "ScanPlan", "build_plan", "offset_formula", "scatter", "gather",
    "es2d", "ss2d",
    "EvssBlock", "InvertedResidual", "stage_rule",
    "Model", "ModelSpec", "VARIANTS", "build_model", "resolve_variant",
    "__version__",
]
