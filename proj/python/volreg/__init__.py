"""Volumetric age-regression toolkit: slice-set networks over 3D scans.

The heavy lifting lives in the compiled extension ``volreg._core``; this
package re-exports its public surface.
"""

from volreg._core import (  # noqa: F401
    Model,
    SliceSet,
    __version__,
    aggregate_attention,
    aggregate_max,
    aggregate_mean,
    attention_weights,
    drop_all_but_kth,
    drop_random_fraction,
    impute_nearest,
    load_volume,
    param_count,
    save_volume,
    slice_volume,
    stack_slices,
    synth_dataset,
    train,
)

__all__ = [
    "Model",
    "SliceSet",
    "aggregate_attention",
    "aggregate_max",
    "aggregate_mean",
    "attention_weights",
    "drop_all_but_kth",
    "drop_random_fraction",
    "impute_nearest",
    "load_volume",
    "param_count",
    "save_volume",
    "slice_volume",
    "stack_slices",
    "synth_dataset",
    "train",
]
