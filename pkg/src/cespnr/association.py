"""CoMP serving-set selection by channel level difference."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelTensor


@dataclass(frozen=True)
class EligibilityMask:
    """Which BSs may serve each user, per ``(k, m, i, n)``.

    ``order[j, m, i, n]`` is the j-th strongest BS for the user; ``eligible``
    is always a prefix of that order. In the default large-scale mode every
    ``(i, n)`` slice is identical.
    """

    eligible: np.ndarray  # bool (K, M, I, N)
    order: np.ndarray  # int (K, M, I, N)

    @property
    def strongest(self) -> np.ndarray:
        """(M, I, N) index of the strongest BS."""
        return self.order[0]

    @property
    def pairs(self) -> np.ndarray:
        """(K, M) True where BS k may serve user m on some subcarrier."""
        return self.eligible.any(axis=(2, 3))

    def cluster_sizes(self) -> np.ndarray:
        return self.eligible.sum(axis=0)


def comp_associate(channels: ChannelTensor | np.ndarray, thresholds, per_subcarrier: bool = False,
                   shape: tuple[int, ...] | None = None) -> EligibilityMask:
    """BS k serves m jointly iff ``strength[strongest, m] / strength[k, m] <= sigma_m``.

    ``sigma_m = 1`` disables joint transmission for user m.

    Strength is the large-scale gain ``g^2`` by default, or the instantaneous
    ``|h|^2`` of each subcarrier with ``per_subcarrier=True``. Ties sort by BS
    index.
    """
    if isinstance(channels, ChannelTensor):
        gain_sq = channels.gain_sq
        large = channels.large_scale**2
    else:
        gain_sq = np.asarray(channels, dtype=float)
        large = gain_sq.mean(axis=(2, 3)) if gain_sq.ndim == 4 else gain_sq
    if per_subcarrier:
        strength = gain_sq
    else:
        full = shape or gain_sq.shape
        strength = np.broadcast_to(large[:, :, None, None], (*large.shape, *full[2:]))
    sigma = np.asarray(thresholds, dtype=float)
    if np.any(sigma < 1):
        raise ValueError("CoMP thresholds must be >= 1")
    order = np.argsort(-strength, axis=0, kind="stable")
    best = np.take_along_axis(strength, order[:1], axis=0)[0]
    with np.errstate(divide="ignore"):
        ratio = best[None] / strength
    lead = order[:1] == np.arange(strength.shape[0])[:, None, None, None]
    # sigma = 1 means single-BS service even when two BSs tie exactly
    eligible = (ratio <= sigma[None, :, None, None]) & (sigma[None, :, None, None] > 1)
    eligible |= lead
    return EligibilityMask(eligible, order)
