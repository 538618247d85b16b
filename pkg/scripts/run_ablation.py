"""Ablation ladder on the synthetic preset: full, align-only, no-align.

    python3 scripts/run_ablation.py --seeds 0 1 2 --out runs/ablation
"""

import argparse
import json
from dataclasses import asdict
from pathlib import Path

from a2summ.experiments import VARIANTS, median, run_variant


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in args.variants:
        runs = [run_variant(v, s) for s in args.seeds]
        for r in runs:
            print(f"{v:10s} seed {r.seed}  f1_video {r.f1_video:.3f}  f1_sentence {r.f1_sentence:.3f}  ({r.seconds:.0f}s)", flush=True)
        rows += [asdict(r) for r in runs]
        print(f"{v:10s} median     f1_video {median(runs, 'f1_video'):.3f}  f1_sentence {median(runs, 'f1_sentence'):.3f}")
    (out / "ablation.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))


if __name__ == "__main__":
    main()
