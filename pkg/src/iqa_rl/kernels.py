"""Backend selection for the hot numeric kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``IQA_RL_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("IQA_RL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

normal_cdf = _impl.normal_cdf
group_stats = _impl.group_stats
rank_rewards = _impl.rank_rewards
token_covariance = _impl.token_covariance
trajectory_surrogates = _impl.trajectory_surrogates
laplacian_variance = _impl.laplacian_variance


def backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels as compiled
    except ImportError:
        pass
    else:
        found["cython"] = compiled
    return found
