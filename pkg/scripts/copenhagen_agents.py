"""Replay the image-gamble protocol for several agent models and report agreement.

    python3 scripts/copenhagen_agents.py --mode multiplicative --seeds 20
"""
import argparse
import json
from pathlib import Path

import numpy as np

from ergodic_econ.ce_harness import AgentSpec, CEConfig, run_game

AGENTS = [
    AgentSpec("ergodicity"),
    AgentSpec("static_exponential", lam=1e-9),
    AgentSpec("static_exponential", lam=1e-2),
    AgentSpec("backward_induction", horizon=1, utility="log"),
    AgentSpec("backward_induction", horizon=3, utility="sqrt"),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mode", choices=["additive", "multiplicative"], default="multiplicative")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--out", default="runs/copenhagen_agents.json")
    args = ap.parse_args()

    labels = [a.label for a in AGENTS]
    agree = np.zeros((len(labels), len(labels)))
    wealth = {k: [] for k in labels}
    for seed in range(args.seeds):
        res = run_game(CEConfig(mode=args.mode, seed=seed), AGENTS)
        for i, a in enumerate(labels):
            wealth[a].append(res.outcomes[a].terminal_wealth)
            for j, b in enumerate(labels):
                agree[i, j] += res.agreement_fraction(a, b) / args.seeds

    width = max(map(len, labels))
    print(f"mode={args.mode} seeds={args.seeds}; mean agreement with ergodicity, median terminal wealth")
    for i, a in enumerate(labels):
        print(f"  {a:<{width}}  {agree[0, i]:6.3f}  {np.median(wealth[a]):12.2f}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"mode": args.mode, "seeds": args.seeds, "agents": labels,
                               "agreement": agree.tolist(),
                               "median_terminal_wealth": {k: float(np.median(v)) for k, v in wealth.items()}},
                              indent=2))
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
