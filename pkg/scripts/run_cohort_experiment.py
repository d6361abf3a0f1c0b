"""Cohort comparison experiment: autonomous vs scripted-teleoperation arms.

Runs matched-noise cohorts on the same phantom population and prints the
outcome table (needle gap, pneumodissection depth, completion time,
perforation and bubble rates). Logs land under --out.

    python scripts/run_cohort_experiment.py --seed 2025 --n 20 --out runs/cohorts
"""

import argparse
import os

from dalksim.harness import TrialConfig, cohort_table, run_cohort


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=2025)
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--target", type=float, default=100.0)
    ap.add_argument("--step", type=float, default=10.0)
    ap.add_argument("--noise-um", type=float, default=5.0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    if args.out:
        os.makedirs(args.out, exist_ok=True)

    base = dict(
        seed=args.seed,
        cohort=args.n,
        phantom={"thickness": 369.4},
        phantom_jitter={"thickness_sd": 24.2, "z_epi_sd": 40.0},
        tracking_noise_um=args.noise_um,
        tracker_mode="oracle-mask",
    )
    arms = []
    for label, mode in (("AR", "autonomous"), ("TR", "teleop")):
        cfg = TrialConfig(controller={"target_gap": args.target, "step_size": args.step,
                                      "mode": mode}, **base)
        stats, _ = run_cohort(cfg, out_dir=args.out, label=label.lower())
        arms.append((label, stats))

    table = cohort_table(arms)
    print(table)
    if args.out:
        path = os.path.join(args.out, "cohort_comparison.tsv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
        print(f"# wrote {path}")


if __name__ == "__main__":
    main()
