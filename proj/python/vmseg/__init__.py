# SPDX-License-Identifier: Apache-2.0
"""Moving-object video segmentation with a convolutional GRU visual memory."""

from ._vmseg import (
    Model,
    VideoSample,
    boundary_f,
    conv2d,
    evaluate_sequence,
    flow_to_angle,
    forward_video,
    generate_video,
    gru_step,
    infer,
    iou,
    load_checkpoint,
    load_sequence,
    make_model,
    save_checkpoint,
    save_sequence,
    train,
)

__all__ = [
    "Model",
    "VideoSample",
    "boundary_f",
    "conv2d",
    "evaluate_sequence",
    "flow_to_angle",
    "forward_video",
    "generate_video",
    "gru_step",
    "infer",
    "iou",
    "load_checkpoint",
    "load_sequence",
    "make_model",
    "save_checkpoint",
    "save_sequence",
    "train",
]
