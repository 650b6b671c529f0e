"""Domain-independent user simulation toolkit for task-oriented dialogue."""

from .ontology import (
    DONTCARE,
    GENERAL,
    REQUESTED,
    DialogueAct,
    DomainSpec,
    Ontology,
    OntologyError,
    SlotSpec,
    make_toy_ontology,
)
from .dialogue import DialogueState, GoalConfig, UserGoal, mark_fulfilled, sample_goal
from .features import FeatureLayout, N_CLASSES
from .net import Checkpoint, NetConfig, load_checkpoint, save_checkpoint
from .agent import DecodePolicy, NeuralUserSimulator, TrainConfig, train_supervised
from .baselines import AgendaConfig, AgendaUserSimulator, EntityDb, RuleSystemAgent, build_db
from .corpus import CorpusDialogue, extract_targets, generate_corpus, leave_one_out_split
from .policy import PPOConfig, RewardSpec, episode_return, evaluate_policy, train_policy
from .evalkit import CorpusFitReport, corpus_fit
from .sim import judge_success, run_dialogue

__version__ = "0.1.0"
