"""Causal video diffusion transformer with kv-cache generation."""

from ._core import (
    ConfigError,
    ContractError,
    DatasetSpec,
    InferenceConfig,
    InitMode,
    IoError,
    KVCache,
    Model,
    ModelConfig,
    NumericError,
    Schedule,
    TrainConfig,
    bench_cache,
    cfg_combine,
    covariance_fraction,
    ddim_step,
    decode_caption,
    delta_edge_fd,
    encode_caption,
    frame_differencing,
    frechet_distance,
    generate,
    junction_indices,
    make_dataset,
    make_schedule,
    prompt_length_support,
    q_sample,
    read_video,
    step_fvd,
    train,
    write_video,
)

__version__ = "0.1.0"
