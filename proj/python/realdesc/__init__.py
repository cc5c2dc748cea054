import torch  # noqa: F401

from ._core import (
    Backbone,
    RealdescError,
    benchmarks,
    class_list,
    classify,
    contrastive_loss,
    filter_name,
    top_k_indices,
    unique_class_batches,
    verify_file,
)

__all__ = [
    "Backbone",
    "RealdescError",
    "benchmarks",
    "class_list",
    "classify",
    "contrastive_loss",
    "filter_name",
    "top_k_indices",
    "unique_class_batches",
    "verify_file",
]
