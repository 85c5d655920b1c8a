"""
IHDP-shaped study tables for demos and tests.

747 subjects, 6 continuous and 19 binary covariates, a binary treatment and
a factual outcome with Y(0) ~ N(Z beta, 1) and Y(1) ~ N(Z beta + 4, 1).
Each trial draws its own beta and noise over the same covariates.
"""
from typing import Optional
import logging

import numpy as np
import pandas as pd
from scipy.special import expit

from services.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

N_SUBJECTS = 747
N_CONTINUOUS = 6
N_BINARY = 19
TREATED_SHARE = 139 / 747
EFFECT = 4.0
BETA_VALUES = (0.0, 0.1, 0.2, 0.3, 0.4)
BETA_PROBS = (0.6, 0.1, 0.1, 0.1, 0.1)
MIN_OUTCOME = 0.5


def covariate_names():
    return [f"x{i}" for i in range(1, N_CONTINUOUS + N_BINARY + 1)]


def make_ihdp_frame(
    seed: int = 0,
    n_trials: int = 1,
    n_subjects: int = N_SUBJECTS,
    observational: bool = False,
) -> pd.DataFrame:
    """
    Generate an IHDP-shaped table

    Args:
        seed: Master seed
        n_trials: Outcome surfaces; more than one adds a 'trial' column
        n_subjects: Rows per trial
        observational: Treatment by expit(x2 + x3 + x4) instead of a fixed share

    Returns:
        DataFrame with columns treatment, y_factual, x1..x25 (and trial)
    """
    rng = make_rng(derive_seed(seed, 0))
    continuous = rng.standard_normal((n_subjects, N_CONTINUOUS))
    shares = rng.uniform(0.1, 0.9, N_BINARY)
    binary = (rng.random((n_subjects, N_BINARY)) < shares).astype(float)
    z = np.column_stack([continuous, binary])

    frames = []
    for trial in range(1, n_trials + 1):
        trial_rng = make_rng(derive_seed(seed, trial))
        if observational:
            treated = trial_rng.random(n_subjects) < expit(z[:, 1] + z[:, 2] + z[:, 3])
        else:
            treated = trial_rng.random(n_subjects) < TREATED_SHARE
        beta = trial_rng.choice(BETA_VALUES, size=z.shape[1], p=BETA_PROBS)
        mu0 = z @ beta
        y0 = mu0 + trial_rng.standard_normal(n_subjects)
        y1 = mu0 + EFFECT + trial_rng.standard_normal(n_subjects)
        y = np.where(treated, y1, y0)
        # keep outcomes positive for gamma causal margins
        y = y + max(0.0, MIN_OUTCOME - float(y.min()))

        frame = pd.DataFrame(z, columns=covariate_names())
        frame.insert(0, "y_factual", y)
        frame.insert(0, "treatment", treated.astype(int))
        if n_trials > 1:
            frame["trial"] = trial
        frames.append(frame)

    frame = pd.concat(frames, ignore_index=True)
    logger.info(f"Generated IHDP-shaped table: {len(frame)} rows, {n_trials} trial(s)")
    return frame


def write_ihdp_csv(path, seed: int = 0, n_trials: int = 1, observational: bool = False,
                   n_subjects: Optional[int] = None) -> pd.DataFrame:
    frame = make_ihdp_frame(seed, n_trials, n_subjects or N_SUBJECTS, observational)
    frame.to_csv(path, index=False, float_format="%.6f")
    return frame
