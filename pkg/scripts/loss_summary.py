"""Print a compact view of a loss_history.csv: one line per logged row,
decimated to at most ``--rows`` lines, plus the phase switch and final values.

    python3 scripts/loss_summary.py runs/desk/train/loss_history.csv
"""

import argparse

import numpy as np

from lmdpinn.losses import read_history


def main():
    ap = argparse.ArgumentParser(description="summarise a loss history")
    ap.add_argument("history")
    ap.add_argument("--rows", type=int, default=30)
    args = ap.parse_args()
    h = read_history(args.history)
    n = len(h["iteration"])
    keep = np.unique(np.linspace(0, n - 1, min(n, args.rows)).astype(int))
    print(f"{'iteration':>9} {'phase':>6} {'l_pde':>10} {'l_ic':>10} {'l_bc':>10} {'l_total':>10}")
    for i in keep:
        print(f"{h['iteration'][i]:9d} {h['phase'][i]:>6} {h['l_pde'][i]:10.3e} {h['l_ic'][i]:10.3e} "
              f"{h['l_bc'][i]:10.3e} {h['l_total'][i]:10.3e}")
    adam = h["phase"] == "adam"
    if adam.any() and (~adam).any():
        last = np.flatnonzero(adam)[-1]
        print(f"switch after iteration {h['iteration'][last]}: l_total {h['l_total'][last]:.3e} "
              f"-> final {h['l_total'][-1]:.3e}")


if __name__ == "__main__":
    main()
