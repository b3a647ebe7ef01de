"""Distillation-interpretability toolkit: dataset synthesis, CNN training
with knowledge distillation, network dissection, and attribution metrics."""

from ._kdi import (
    ContractError,
    FormatError,
    Model,
    ParamError,
    ShapeError,
    __version__,
    dissect,
    five_band,
    integrated_gradients,
    load_model,
    loss_gradient,
    loss_kd,
    loss_ls,
    make_dataset,
    normalize01,
    read_dataset,
    saliency,
    train_model,
    unit_threshold,
    write_dataset,
)

__all__ = [
    "ContractError",
    "FormatError",
    "Model",
    "ParamError",
    "ShapeError",
    "__version__",
    "dissect",
    "five_band",
    "integrated_gradients",
    "load_model",
    "loss_gradient",
    "loss_kd",
    "loss_ls",
    "make_dataset",
    "normalize01",
    "read_dataset",
    "saliency",
    "train_model",
    "unit_threshold",
    "write_dataset",
]
