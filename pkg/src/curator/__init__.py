"""Criticality-driven curation of driving scenarios for offline policy learning.

Scores every logged transition of a scenario corpus with three signals
(rule-based heuristics, action rarity and scout-ensemble disagreement),
aggregates them per scenario, and turns them into weighted samplers whose
effect is measured by closed-loop evaluation of cloned policies.
"""
from .curation import (EPSILON, STRATEGIES, MasterIndex, ScenarioEpochSampler, TimestepSampler,
                       build_master_index, percentile, scenario_epoch_iter, timestep_sampler)
from .dynamics import Action, KinState, forward_step, inverse_action, kinematic_chain
from .errors import CuratorError
from .evaluation import EvalMetrics, RewardWeights, collision_check, compute_reward, evaluate, rollout
from .features import FeatureConfig, StateFeatures, extract_state, flatten
from .heuristics import HeuristicConstants, HeuristicWeights, score_scenario
from .rarity import ActionHistogram, build_histogram, normalize_rarity, rarity_raw
from .scenario import AgentTrack, MapPolyline, Scenario, load_corpus, load_scenario, save_scenario
from .scouts import EnsembleSpec, ScoutModel, disagreement, predict, score_corpus_uncertainty, train_ensemble
from .synth import CorpusSpec, PlantedEvent, generate_corpus, script_expert

__version__ = "0.1.0"
