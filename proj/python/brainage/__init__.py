"""Dual-modality brain-age pipeline on synthetic phantoms.

Thin wrapper over the C++ core. Volumes are numpy arrays indexed [z, y, x].
"""

import json as _json

from ._brainage import (
    BrainageError,
    default_config,
    f_upper_tail,
    load_nifti,
    make_phantom,
    nested_f_test,
    normalize_top_percent,
    ols_fit,
    regularized_incomplete_beta,
    run_stage,
    save_nifti,
    t_two_sided,
    top_fraction_mask,
)

STAGES = ("synth", "split", "train_t1w", "train_aicbv", "predict", "ensemble", "report", "gradcam")


def run(config=None, out=None, seed=None, stages=("all",), verbose=False):
    """Runs pipeline stages in order. `config` is a dict, a JSON string or None."""
    text = _json.dumps(config) if isinstance(config, dict) else config
    for stage in stages:
        run_stage(stage, text, None if out is None else str(out), seed, verbose)


__all__ = [
    "BrainageError",
    "STAGES",
    "default_config",
    "f_upper_tail",
    "load_nifti",
    "make_phantom",
    "nested_f_test",
    "normalize_top_percent",
    "ols_fit",
    "regularized_incomplete_beta",
    "run",
    "run_stage",
    "save_nifti",
    "t_two_sided",
    "top_fraction_mask",
]
