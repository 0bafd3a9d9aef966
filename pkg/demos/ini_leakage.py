"""Inter-numerology leakage between a 15 kHz and a 30 kHz grid.

Run: python3 demos/ini_leakage.py
"""
import numpy as np

from cespnr.baselines import apply_mode
from cespnr.phy import LinkModel, ini_weights
from cespnr.scenario import load_config

cfg = load_config(None)
grid = cfg.grid
W_narrow, W_wide = ini_weights(grid)
np.set_printoptions(precision=4, suppress=True, linewidth=120)

# %% coupling from each wide subcarrier into each narrow one (rows: victim)
print("narrow victims, wide sources\n", W_narrow)
# %% and the reverse direction; leakage concentrates on overlapping spectrum
print("wide victims, narrow sources\n", W_wide)

# %% total leakage seen by each victim at unit power on the other grid
p = np.ones((1, 1, grid.num, grid.n_max)) * grid.valid
model = LinkModel(np.ones_like(p), 1.0, grid)
print("INI at unit power\n", model.ini(p)[0, 0])

# %% one shared numerology has no leakage at all
sn = apply_mode(cfg, sn=True).grid
ps = np.ones((1, 1, 1, sn.n_max))
print("single-numerology INI max", LinkModel(np.ones_like(ps), 1.0, sn).ini(ps).max())
