"""Large-scale pathloss and Rayleigh fading channel draws."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import ScenarioConfig, Topology


def pathloss_db(d):
    """Distance-dependent pathloss ``61.4 + 34.1 log10(d)`` in dB, ``d`` in metres."""
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError(f"pathloss needs positive distances, got {d[~(d > 0)]}")
    out = 61.4 + 34.1 * np.log10(d)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ChannelTensor:
    """Channel power gains indexed ``[k, m, i, n]`` (BS, user, numerology, subcarrier)."""

    large_scale: np.ndarray  # (K, M) amplitude g_{k,m}
    small_scale_sq: np.ndarray  # (K, M, I, N) |beta|^2, unit mean

    @property
    def gain_sq(self) -> np.ndarray:
        return self.large_scale[:, :, None, None] ** 2 * self.small_scale_sq

    @property
    def shape(self) -> tuple[int, ...]:
        return self.small_scale_sq.shape

    def dump(self, path, valid: np.ndarray | None = None) -> None:
        """Write ``k m i n gain_sq`` rows (0-based indices, repr floats)."""
        gain = self.gain_sq
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("k m i n gain_sq\n")
            for (k, m, i, n), g in np.ndenumerate(gain):
                if valid is None or valid[i, n]:
                    fh.write(f"{k} {m} {i} {n} {float(g)!r}\n")


def load_dump(path, shape) -> np.ndarray:
    gain = np.zeros(shape)
    rows = np.loadtxt(path, skiprows=1, ndmin=2)
    idx = rows[:, :4].astype(int)
    gain[tuple(idx.T)] = rows[:, 4]
    return gain


def draw_channels(topology: Topology, cfg: ScenarioConfig, rng: np.random.Generator) -> ChannelTensor:
    """g = 10^(-PL(d)/20) per BS-user pair; |beta|^2 ~ Exp(1) i.i.d. per (k, m, i, n).

    The fading draw is one value per existing subcarrier in grid order, so
    grids with the same total subcarrier count see the same draws for a seed.
    """
    g = 10.0 ** (-pathloss_db(topology.distances()) / 20.0)
    K, M = g.shape
    valid = cfg.grid.valid
    draws = rng.exponential(1.0, size=(K, M, int(valid.sum())))
    beta_sq = np.zeros((K, M, *valid.shape))
    beta_sq[:, :, valid] = draws
    return ChannelTensor(np.asarray(g), beta_sq)
