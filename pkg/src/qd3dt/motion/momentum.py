from __future__ import annotations

import numpy as np

from ..geometry import wrap_angle


def momentum_update(prev_refined, obs, momentum: float = 0.5) -> np.ndarray:
    """Blend the previous refined 7-state toward the observation.

    The next-state prediction of this model is the refined state itself.
    """
    if not 0.0 <= momentum <= 1.0:
        raise ValueError("momentum must lie in [0, 1]")
    prev = np.asarray(prev_refined, dtype=float)
    obs = np.asarray(obs, dtype=float)
    delta = obs - prev
    delta[3] = wrap_angle(delta[3])
    out = prev + (1.0 - momentum) * delta
    out[3] = wrap_angle(out[3])
    return out
