"""Train the full model on the synthetic preset for a few seeds and report val F1 against random scores.

    python3 scripts/train_synthetic.py --seeds 0 1 2 --out runs/synthetic
"""

import argparse

from a2summ.experiments import median, run_variant


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default=None, help="keep checkpoints under OUT/seed<k>")
    args = ap.parse_args()

    runs = []
    for s in args.seeds:
        r = run_variant("full", s, out_dir=f"{args.out}/seed{s}" if args.out else None)
        runs.append(r)
        print(
            f"seed {s}: best epoch {r.best_epoch}  f1_video {r.f1_video:.3f} (random {r.random_f1_video:.3f}, "
            f"epoch 0 {r.initial_f1_video:.3f})  f1_sentence {r.f1_sentence:.3f} (random {r.random_f1_sentence:.3f})  "
            f"{r.seconds:.0f}s",
            flush=True,
        )
    print(f"median f1_video {median(runs, 'f1_video'):.3f}  f1_sentence {median(runs, 'f1_sentence'):.3f}")


if __name__ == "__main__":
    main()
