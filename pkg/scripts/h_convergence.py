"""Step-size study: t E[W_2^2] on the circle at h and h/2 with common seeds.

    python3 scripts/h_convergence.py --t 100 --replicas 100
"""

import argparse
import json
import math

from ergolab.experiment_harness import DEFAULT_SEED, mc_moment_experiment
from ergolab.model_spaces import Circle, Interval


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--space", choices=["circle", "neumann"], default="circle")
    ap.add_argument("--t", type=float, default=100.0)
    ap.add_argument("--replicas", type=int, default=100)
    ap.add_argument("--h", type=float, nargs="+", default=[4e-3, 2e-3, 1e-3])
    ap.add_argument("--seed", type=int, default=DEFAULT_SEED)
    args = ap.parse_args()
    space = Circle() if args.space == "circle" else Interval(math.pi)
    rows = []
    for h in args.h:
        rep = mc_moment_experiment(space, t_list=(args.t,), replicas=args.replicas, h=h, seed=args.seed)
        p = rep.points[0]
        rows.append({"h": h, "estimate": p.estimate, "ci_half": p.ci_half, "ratio": p.ratio})
        print(f"h={h:g}  t E[W2^2]={p.estimate:.4f} ± {p.ci_half:.4f}  ratio {p.ratio:.3f}", flush=True)
    print(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
