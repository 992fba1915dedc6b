"""Desk-scale league demo: 2 copies each of the four policy kinds play a
round of uniformly random pairings; prints the Elo table and collaboration
metrics and writes the report bundle.

Usage: python scripts/league_demo.py [--games 60] [--steps 400] [--seed 3] [--out DIR]
"""

import argparse
import os
import tempfile

import numpy as np

from taaclab.baselines import build_policy
from taaclab.config import LeagueSettings
from taaclab.env import EnvConfig
from taaclab.evaluation import run_league
from taaclab.nets import TaacNetConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--games", type=int, default=60)
    parser.add_argument("--steps", type=int, default=400)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    env_cfg = EnvConfig(steps_per_game=args.steps)
    net_cfg = TaacNetConfig()
    league_cfg = LeagueSettings(n_games=args.games, threads=args.threads)

    teams = []
    idx = 0
    for kind in league_cfg.kinds:
        for copy in range(league_cfg.teams_per_kind):
            rng = np.random.default_rng(np.random.SeedSequence([args.seed, 4, idx]))
            teams.append((f"{kind}-{copy}", build_policy(kind, net_cfg, rng)))
            idx += 1

    out_dir = args.out or os.path.join(tempfile.mkdtemp(), "league")
    report = run_league(teams, env_cfg, league_cfg, args.seed, out_dir)

    print(f"{'team':<18} {'elo':>8} {'pairdist':>9} {'conn':>6} {'swaps':>6}")
    ranked = sorted(report["teams"], key=lambda n: -report["elo_final"][n])
    for name in ranked:
        collab = report["collaboration"][name]

        def cell(metric, fmt):
            value = collab[metric]["mean"]
            return "-" if value is None else format(value, fmt)

        print(f"{name:<18} {report['elo_final'][name]:>8.1f} "
              f"{cell('pairwise_distance', '9.2f'):>9} "
              f"{cell('connectivity', '6.3f'):>6} "
              f"{cell('possession_swaps', '6.2f'):>6}")
    print(f"\nreport bundle: {out_dir}")


if __name__ == "__main__":
    main()
