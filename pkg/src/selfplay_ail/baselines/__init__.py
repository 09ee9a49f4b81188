# Copyright (c) Microsoft. All rights reserved.

"""Self-play baselines: SPIN, SPPO, INPO and iterative DPO."""

from selfplay_ail.baselines.preference import inpo_train, iterative_dpo_iterates, sppo_train
from selfplay_ail.baselines.spin import linear_spin_run, spin_exact_iterates, spin_train

__all__ = [
    "inpo_train",
    "iterative_dpo_iterates",
    "linear_spin_run",
    "spin_exact_iterates",
    "spin_train",
    "sppo_train",
]
