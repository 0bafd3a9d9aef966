"""Small versions of the figure sweeps, printed as mean +- std per point.

Run: python3 demos/sweeps.py [preset ...] [--seeds n]
The full-size sweeps are `python3 -m cespnr run --preset <name> --out results/`.
"""
import argparse

from cespnr.harness import aggregate, run_preset
from cespnr.scenario import load_config

parser = argparse.ArgumentParser()
parser.add_argument("presets", nargs="*", default=["rate-vs-power", "comp-vs-noncomp", "benchmark-compare"])
parser.add_argument("--seeds", type=int, default=3)
args = parser.parse_args()
cfg = load_config(None)

for name in args.presets:
    table = run_preset(cfg, name, seeds=range(args.seeds))
    print(f"\n== {name} ({args.seeds} seeds)")
    print(f"{'point':32s} {'scheme':12s} {'mode':12s} {'sum rate':>16s} {'edge':>8s} {'r_out':>6s} {'l_out':>6s}")
    for key, entry in aggregate(table).items():
        point, scheme, mode = key.split("|")
        s = entry["sum_rate"]
        print(f"{point:32s} {scheme:12s} {mode:12s} {s['mean']:8.3f} +- {s['std']:5.2f} "
              f"{entry['edge_sum_rate']['mean']:8.3f} {entry['rate_outage']['mean']:6.3f} "
              f"{entry['latency_outage']['mean']:6.3f}")
