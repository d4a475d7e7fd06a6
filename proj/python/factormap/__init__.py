"""Python access to the factormap mapping core."""

from ._core import (
    ConfigError,
    DataError,
    DivergenceError,
    Error,
    InvalidInput,
    Map,
    accuracy_cm,
    completion_cm,
    completion_ratio,
    default_config,
    default_scene,
    evaluate,
    flops_per_point,
    main,
    param_count,
    psnr_from_mse,
    read_ply,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DivergenceError",
    "Error",
    "InvalidInput",
    "Map",
    "accuracy_cm",
    "completion_cm",
    "completion_ratio",
    "default_config",
    "default_scene",
    "evaluate",
    "flops_per_point",
    "main",
    "param_count",
    "psnr_from_mse",
    "read_ply",
    "run",
]


def run(*args):
    """Run a CLI subcommand, raising on a non-zero exit code.

    Returns captured stdout.
    """
    code, out, err = main([str(a) for a in args])
    if code != 0:
        raise RuntimeError(f"factormap {' '.join(map(str, args))} exited {code}: {err.strip()}")
    return out
