"""Budget-constrained bidding as λ control with deep Q-learning."""

from .agent import AgentConfig, DRLBAgent, Lambda0Policy, epsilon_at, is_unimodal, run_training, \
    select_action, td_targets
from .baselines import BaselineConfig, bslb_bid, flb_bid, run_baseline_episode
from .bidder import ActionSpace, Norms, StateVector, apply_action, build_state, compute_bid
from .config import ConfigError, ExperimentConfig, parse_config
from .data import SynthesisSpec, generate_synthetic, parse_log, write_log
from .env import EpisodeData, Impression, is_terminal, reset, step
from .experiment import emit_plot_data, run_experiment
from .nn import MLP, TrainConfig, gradient_check, load_checkpoint, save_checkpoint, sgd_step
from .oracle import (brute_force_value, deviation_group, optimal_lambda_greedy, r_over_rstar,
                     theorem_equivalence_check)
from .rewardnet import RewardNet, RewardStore, finalize_episode, make_key, predict_reward, \
    train_rewardnet_step

__version__ = "0.1.0"
