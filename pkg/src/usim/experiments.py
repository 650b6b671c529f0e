"""Experiment drivers: feature/loss ablation, cross-model success matrices,
and leave-one-domain-out zero-shot transfer, all seeded end to end.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Callable, Optional, Sequence

import numpy as np

from .agent import NeuralUserSimulator, TrainConfig, train_supervised
from .baselines import AgendaConfig, AgendaUserSimulator, EntityDb
from .corpus import CorpusDialogue, SplitSpec, leave_one_out_split, make_split, select
from .dialogue import GoalConfig
from .evalkit import corpus_fit
from .features import FeatureLayout
from .net import Checkpoint, NetConfig
from .ontology import Ontology
from .policy import PPOConfig, PolicyCheckpoint, RewardSpec, evaluate_policy, train_policy
from .util import parallel_map

ABLATION_VARIANTS = ("basic", "index", "domainloss")

# A simulator spec is picklable data: ("agenda", AgendaConfig) or
# ("neural", Checkpoint). Specs cross process boundaries; factories cannot.
SimulatorSpec = tuple


def build_simulator(spec: SimulatorSpec, ontology: Ontology):
    kind = spec[0]
    if kind == "agenda":
        return AgendaUserSimulator(ontology, spec[1] or AgendaConfig())
    if kind == "neural":
        return NeuralUserSimulator(ontology, spec[1])
    raise ValueError(f"unknown simulator spec {kind!r}")


def _eval_cell(payload: dict) -> tuple:
    """One evaluation cell; runs in-process or in a worker process."""
    ontology = Ontology.from_dict(payload["ontology"])
    db = EntityDb(ontology, payload["db"])
    make_user = lambda: build_simulator(payload["sim_spec"], ontology)  # noqa: E731
    res = evaluate_policy(
        payload["policy"], make_user, ontology, db, payload["n_eval"],
        seed=payload["eval_seed"], goal_config=payload["goal_config"],
        reward=payload["reward"],
    )
    return payload["key"], res["success_rate"]


def ablation_variant(name: str, net_config: NetConfig, ontology: Ontology,
                     l_d: int = 6, l_s: int = 10) -> tuple[NetConfig, FeatureLayout]:
    """basic: no index features, no domain loss; index: features only;
    domainloss: features plus the turn-domain loss term."""
    if name == "basic":
        return (replace(net_config, use_domain_loss=False),
                FeatureLayout.for_ontology(ontology, l_d, l_s, include_index=False))
    if name == "index":
        return (replace(net_config, use_domain_loss=False),
                FeatureLayout.for_ontology(ontology, l_d, l_s, include_index=True))
    if name == "domainloss":
        return (replace(net_config, use_domain_loss=True),
                FeatureLayout.for_ontology(ontology, l_d, l_s, include_index=True))
    raise ValueError(f"unknown ablation variant {name!r}")


def run_ablation(
    dialogues: Sequence[CorpusDialogue],
    ontology: Ontology,
    net_config: NetConfig,
    train_config: TrainConfig,
    split: Optional[SplitSpec] = None,
) -> dict:
    """Train the three variants on one split with shared seeds; report the
    teacher-forced fit of each on the held-out dev dialogues."""
    split = split or make_split(dialogues)
    eval_dialogues = select(dialogues, split.dev_ids) or list(dialogues)
    reports = {}
    checkpoints = {}
    for name in ABLATION_VARIANTS:
        cfg, layout = ablation_variant(name, net_config, ontology)
        ckpt, history = train_supervised(dialogues, ontology, cfg, train_config,
                                         layout=layout, split=split)
        fit = corpus_fit(ckpt, eval_dialogues, ontology)
        reports[name] = fit.to_dict()
        reports[name]["history_epochs"] = len(history)
        checkpoints[name] = ckpt
    len_basic = reports["basic"]["first_turn_len"]
    len_index = reports["index"]["first_turn_len"]
    summary = {
        "variants": reports,
        "len_basic": len_basic,
        "len_index": len_index,
        # how far the basic variant over-generates: basic = (1 + excess) * index
        "len_relative_excess": (len_basic - len_index) / len_index if len_index else None,
        "len_relative_drop": (len_basic - len_index) / len_basic if len_basic else None,
        "acc_index": reports["index"]["turn_accuracy"],
        "acc_domainloss": reports["domainloss"]["turn_accuracy"],
    }
    return {"summary": summary, "checkpoints": checkpoints}


def run_cross_model(
    simulators: dict[str, SimulatorSpec],
    ontology: Ontology,
    db: EntityDb,
    ppo_config: PPOConfig,
    seeds: Sequence[int],
    n_eval: int = 500,
    eval_seed: int = 7777,
    goal_config: Optional[GoalConfig] = None,
    reward: RewardSpec = RewardSpec(),
    jobs: int = 1,
) -> dict:
    """Train a policy per (simulator, seed), evaluate each against every
    simulator; cells carry the per-seed rates, mean, and stderr.

    Evaluation cells are independent (each owns its agents and seeds) and run
    through parallel_map; results merge deterministically by cell key.
    """
    if len(simulators) < 1:
        raise ValueError("need at least one simulator")
    cells: dict[str, dict[str, dict]] = {name: {} for name in simulators}
    policies: dict[tuple[str, int], PolicyCheckpoint] = {}
    for train_name, spec in simulators.items():
        for seed in seeds:
            cfg = replace(ppo_config, seed=seed)
            factory = lambda: build_simulator(spec, ontology)  # noqa: E731
            try:
                ckpt, _ = train_policy(factory, ontology, db, cfg,
                                       goal_config=goal_config, reward=reward)
            except Exception as exc:  # noqa: BLE001 - cell failure is reported, not fatal
                cells[train_name]["__train_error__"] = {"seed": seed, "error": str(exc)}
                continue
            policies[(train_name, seed)] = ckpt

    payloads = []
    for train_name in simulators:
        for eval_name, eval_spec in simulators.items():
            for seed in seeds:
                ckpt = policies.get((train_name, seed))
                if ckpt is None:
                    continue
                payloads.append({
                    "key": (train_name, eval_name, seed),
                    "ontology": ontology.to_dict(),
                    "db": db.entities,
                    "policy": ckpt,
                    "sim_spec": eval_spec,
                    "n_eval": n_eval,
                    "eval_seed": eval_seed,
                    "goal_config": goal_config,
                    "reward": reward,
                })
    results = dict(parallel_map(_eval_cell, payloads, jobs=jobs))
    for train_name in simulators:
        for eval_name in simulators:
            rates = [results[(train_name, eval_name, seed)] for seed in seeds
                     if (train_name, eval_name, seed) in results]
            cells[train_name][eval_name] = {
                "rates": rates,
                "mean": float(np.mean(rates)) if rates else None,
                "stderr": float(np.std(rates) / np.sqrt(len(rates))) if rates else None,
                "n_eval": n_eval,
                "seeds": list(seeds),
            }
    return {"matrix": cells, "policies": policies}


def cross_model_gaps(matrix: dict, a: str = "agenda", b: str = "neural") -> dict:
    """Generalization gaps: success on own trainer minus success on the other."""
    gap_a = matrix[a][a]["mean"] - matrix[a][b]["mean"]
    gap_b = matrix[b][a]["mean"] - matrix[b][b]["mean"]
    return {
        f"{a}_trained_gap": gap_a,
        f"{b}_trained_gap": gap_b,
        "difference": gap_a - gap_b,
    }


def run_zero_shot(
    dialogues: Sequence[CorpusDialogue],
    ontology: Ontology,
    db: EntityDb,
    domains: Sequence[str],
    net_config: NetConfig,
    train_config: TrainConfig,
    ppo_config: PPOConfig,
    seeds: Sequence[int],
    n_eval: int = 200,
    eval_seed: int = 8888,
    goal_config: Optional[GoalConfig] = None,
    full_checkpoint: Optional[Checkpoint] = None,
    reward: RewardSpec = RewardSpec(),
) -> dict:
    """Leave-one-domain-out pipeline.

    For each held-out domain: train the simulator without that domain's
    dialogues, train policies against it on goals over all domains, then
    measure per-domain success against the independent agenda-based referee.
    """
    goal_config = goal_config or GoalConfig()
    referee = lambda: AgendaUserSimulator(ontology)  # noqa: E731

    def policies_success(us_ckpt: Checkpoint) -> dict:
        per_domain_rates: dict[str, list[float]] = {d: [] for d in ontology.domain_names()}
        overall = []
        for seed in seeds:
            cfg = replace(ppo_config, seed=seed)
            factory = lambda: NeuralUserSimulator(ontology, us_ckpt)  # noqa: E731
            policy, _ = train_policy(factory, ontology, db, cfg,
                                     goal_config=goal_config, reward=reward)
            res_all = evaluate_policy(policy, referee, ontology, db, n_eval,
                                      seed=eval_seed, goal_config=goal_config, reward=reward)
            overall.append(res_all["success_rate"])
            for domain in ontology.domain_names():
                single = GoalConfig(
                    min_domains=1, max_domains=1,
                    min_constraints=goal_config.min_constraints,
                    max_constraints=goal_config.max_constraints,
                    min_requests=goal_config.min_requests,
                    max_requests=goal_config.max_requests,
                )
                res = evaluate_policy(policy, referee, ontology, db, n_eval,
                                      seed=eval_seed, goal_config=single,
                                      goal_domains=[domain], reward=reward)
                per_domain_rates[domain].append(res["success_rate"])
        return {
            "overall": float(np.mean(overall)),
            "per_domain": {d: float(np.mean(v)) for d, v in per_domain_rates.items()},
        }

    if full_checkpoint is None:
        full_checkpoint, _ = train_supervised(dialogues, ontology, net_config, train_config)
    full_result = policies_success(full_checkpoint)

    held_out = {}
    for domain in domains:
        split = leave_one_out_split(dialogues, domain, ontology)
        ckpt, _ = train_supervised(dialogues, ontology, net_config, train_config, split=split)
        result = policies_success(ckpt)
        held_out[domain] = {
            "removed_fraction": split.removed_fraction,
            "overall": result["overall"],
            "per_domain": result["per_domain"],
            "held_out_success": result["per_domain"][domain],
            "full_success_on_domain": full_result["per_domain"][domain],
            "delta_vs_full": result["per_domain"][domain] - full_result["per_domain"][domain],
        }
    return {"full": full_result, "held_out": held_out, "seeds": list(seeds), "n_eval": n_eval}
