# Copyright (c) Microsoft. All rights reserved.
import os
from typing import Any


def get_default_run_settings() -> dict[str, Any]:
    """
    Get the default settings merged under every run configuration.

    Returns
    -------
    dict[str, Any]
        Nested settings keyed by configuration section.
    """
    return {
        "bandit": {
            "n_contexts": 4,
            "n_responses": 8,
            "expert_concentration": 0.5,  # Dirichlet(0.5) expert
            "reference": "uniform",
        },
        "game": {
            "iterations": 8,
            "beta": 1.0,
            "r_max": 1.0,
            "zeta": 1.0,
            "regularizer": "box",
            "c": 2.0,
            "alpha": 0.5,
            "link": "identity",
            "mode": "unmapped",
            "schedule": "fixed",
        },
        "spif": {
            "iterations": 8,
            "beta": 1.0,
            "c": 2.0,
            "alpha": 0.5,
            "zeta": 1e-3,
            "regularizer_form": "union",
            "inner_steps": 200,
            "lr": 1.0,
            "sampling": "exact",
            "n": 256,
            "history_window": 1,
        },
        "baseline": {
            "iterations": 8,
            "beta": 1.0,
            "r_max": 1.0,
            "eta": 1.0,
            "tau": 0.5,
            "inner_steps": 200,
            "lr": 1.0,
        },
        "sweep": {
            "horizons": [16, 64, 256, 1024],
            "c_values": [0.125, 0.5, 2.0],
        },
    }


def get_default_out_dir() -> str:
    """Output directory from ``SELFPLAY_AIL_OUT_DIR``, defaulting to ``runs``."""
    return os.getenv("SELFPLAY_AIL_OUT_DIR", "runs")


def get_default_threads() -> int:
    """Worker count from ``SELFPLAY_AIL_THREADS``, defaulting to 1."""
    return int(os.getenv("SELFPLAY_AIL_THREADS", "1"))
