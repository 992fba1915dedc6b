"""Multi-agent attention actor-critic laboratory.

A self-contained stack for studying attention-based team policies on a 2D
soccer simulator: a float64 tape-autodiff engine, actor/critic networks
with a counterfactual baseline and a conformity (embedding-diversity)
penalty, a 4-stage self-play curriculum, PPO/random baselines, and an Elo
league evaluation harness with collaboration metrics.
"""

__version__ = "0.1.0"
