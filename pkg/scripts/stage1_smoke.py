"""Scaled stage-1 experiment: train the attention actor-critic against an
inactive opponent, then compare its goals-per-episode to the uniform-random
baseline on fresh evaluation episodes.

Usage: python scripts/stage1_smoke.py [--games 600] [--episodes 200] [--seed 7]
"""

import argparse
import os
import tempfile
import time

import numpy as np

from taaclab.baselines import InactiveTeamPolicy, RandomTeamPolicy
from taaclab.config import CurriculumSettings, LearnerSettings, RunConfig
from taaclab.env import EnvConfig
from taaclab.learner import play_training_game, run_curriculum
from taaclab.nets import TaacNetConfig


def goals_per_episode(policy, env_cfg, episodes, seed):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    opponent = InactiveTeamPolicy()
    done = goals = 0
    while done < episodes:
        _, stats = play_training_game(policy, opponent, env_cfg, rng, "random_spawns")
        done += stats["episodes"]
        goals += stats["goals_for"]
    return goals / done


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--games", type=int, default=600)
    parser.add_argument("--episodes", type=int, default=200)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", default=None, help="training output dir (temp dir if omitted)")
    args = parser.parse_args()

    env_cfg = EnvConfig(steps_per_game=240, theta_exp=0.05, theta_ball=0.1)
    cfg = RunConfig(
        env=env_cfg,
        net=TaacNetConfig(d_model=32, actor_heads=2, critic_heads=2,
                          embed_hidden=32, post_hidden=32),
        learner=LearnerSettings(gamma=0.9, actor_lr=3e-3, critic_lr=3e-3,
                                snapshot_interval=200),
        curriculum=CurriculumSettings(stage_games=(args.games, 0, 0, 0)),
        seed=args.seed,
        out_dir=args.out or os.path.join(tempfile.mkdtemp(), "stage1"),
    )

    print(f"evaluating the random baseline over {args.episodes} episodes...")
    random_gpe = goals_per_episode(RandomTeamPolicy(), env_cfg, args.episodes, args.seed)
    print(f"random: {random_gpe:.4f} goals/episode")

    print(f"training stage 1 for {args.games} games (out_dir={cfg.out_dir})...")
    start = time.time()
    result = run_curriculum(cfg, resume=False)
    print(f"trained in {time.time() - start:.0f}s; log at {result.log_path}")

    trained_gpe = goals_per_episode(result.policy, env_cfg, args.episodes, args.seed)
    if random_gpe > 0:
        print(f"trained: {trained_gpe:.4f} goals/episode "
              f"({trained_gpe / random_gpe:.1f}x the random baseline)")
    else:
        print(f"trained: {trained_gpe:.4f} goals/episode (random baseline scored 0)")


if __name__ == "__main__":
    main()
