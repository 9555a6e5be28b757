"""Pure-numpy kernels; the reference backend and the import-time fallback.

Every function here has a twin with the same signature in ``_kernels.pyx``.
Inputs are assumed already validated by the public wrappers.
"""

import numpy as np
from scipy.special import erfc

_SQRT2 = np.sqrt(2.0)


def normal_cdf(z):
    return 0.5 * erfc(-np.asarray(z, dtype=np.float64) / _SQRT2)


def group_stats(ratings, offsets, v_floor):
    sizes = np.diff(offsets)
    group = np.repeat(np.arange(len(sizes)), sizes)
    mu = np.bincount(group, weights=ratings, minlength=len(sizes)) / sizes
    dev = ratings - mu[group]
    ss = np.bincount(group, weights=dev * dev, minlength=len(sizes))
    var = np.where(sizes > 1, ss / np.maximum(sizes - 1, 1), 0.0)
    return mu, np.maximum(var, v_floor)


def rank_rewards(ratings, offsets, mos, v_floor):
    ratings = np.ascontiguousarray(ratings, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    mos = np.ascontiguousarray(mos, dtype=np.float64)
    n_groups = len(offsets) - 1
    mu, var = group_stats(ratings, offsets, v_floor)
    group = np.repeat(np.arange(n_groups), np.diff(offsets))

    z = (ratings[:, None] - mu[None, :]) / np.sqrt(var[group][:, None] + var[None, :])
    p_hat = normal_cdf(z)
    mos_i = mos[group][:, None]
    p_star = np.where(mos_i > mos[None, :], 1.0, np.where(mos_i < mos[None, :], 0.0, 0.5))
    bc = np.sqrt(p_hat * p_star) + np.sqrt((1.0 - p_hat) * (1.0 - p_star))
    bc[np.arange(len(ratings)), group] = 0.0
    return bc.sum(axis=1) / (n_groups - 1)


def token_covariance(logp, adv):
    logp = np.asarray(logp, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return (logp - logp.mean()) * (adv - adv.mean())


def trajectory_surrogates(lp_new, lp_old, adv, valid, offsets, eps_clip):
    """Validity-weighted mean of the clipped PPO term for each trajectory."""
    lp_new = np.asarray(lp_new, dtype=np.float64)
    lp_old = np.asarray(lp_old, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    valid = np.asarray(valid, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.int64)
    ratio = np.exp(lp_new - lp_old)
    term = np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps_clip, 1.0 + eps_clip) * adv)
    term = np.where(valid > 0, term, 0.0)
    traj = np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))
    num = np.bincount(traj, weights=term, minlength=len(offsets) - 1)
    den = np.bincount(traj, weights=valid, minlength=len(offsets) - 1)
    return num / den


def laplacian_variance(luma):
    luma = np.asarray(luma, dtype=np.float64)
    lap = (
        luma[:-2, 1:-1] + luma[2:, 1:-1] + luma[1:-1, :-2] + luma[1:-1, 2:]
        - 4.0 * luma[1:-1, 1:-1]
    )
    return float(lap.var())
