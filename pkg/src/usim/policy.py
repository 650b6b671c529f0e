"""Learnable system policy and a clipped-surrogate policy-gradient trainer.

The policy observes a fixed-width binary featurization of the system's view
and picks one delexicalized action per turn; realization grounds it against
the entity database. Reward: -1 per turn, +80 on success, -40 on failure,
hard stop at 40 turns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import EntityDb
from .dialogue import GoalConfig, UserGoal, sample_goal
from .net import Adam, CheckpointError, TrainingAbort, read_container, write_container
from .ontology import DONTCARE, DialogueAct, Ontology, key_slot
from .sim import run_dialogue
from .util import make_rng

POLICY_SCHEMA = "policy/1"


@dataclass(frozen=True)
class RewardSpec:
    success_reward: float = 80.0
    per_turn: float = -1.0
    failure_penalty: float = -40.0
    max_turns: int = 40


def episode_return(turns: int, success: bool, spec: RewardSpec = RewardSpec()) -> float:
    """Undiscounted episode return implied by the reward constants."""
    base = spec.per_turn * turns
    return base + (spec.success_reward if success else spec.failure_penalty)


class ActionSpace:
    """Finite delexicalized act set over (domain index, slot index) pairs."""

    def __init__(self, ontology: Ontology, l_d: int = 6, l_s: int = 10):
        self.ontology = ontology
        self.l_d = l_d
        self.l_s = l_s
        self.actions: list[tuple] = []
        for di in range(l_d):
            for si in range(l_s):
                self.actions.append(("request", di, si))
        for di in range(l_d):
            for si in range(l_s):
                self.actions.append(("inform", di, si))
        for kind in ("recommend", "book", "nooffer"):
            for di in range(l_d):
                self.actions.append((kind, di))
        self.actions.append(("reqmore",))
        self.actions.append(("bye",))

    def __len__(self) -> int:
        return len(self.actions)

    def describe(self, index: int) -> str:
        return "-".join(str(x) for x in self.actions[index])


# Turn-count buckets for the state featurizer.
_TURN_BUCKETS = ((0, 4), (5, 9), (10, 14), (15, 19), (20, 29), (30, 10**9))


class SystemStateTracker:
    """System-side bookkeeping: engagement-ordered domain indices, ontology-
    ordered slot indices, belief, pending/answered requests, committed offers.
    """

    def __init__(self, ontology: Ontology, db: EntityDb, l_d: int, l_s: int):
        self.ontology = ontology
        self.db = db
        self.l_d = l_d
        self.l_s = l_s
        self.slot_names: dict[str, list[str]] = {
            spec.name: [s.name for s in spec.slots][:l_s] for spec in ontology.domains
        }
        self.reset()

    def reset(self) -> None:
        self.domain_order: list[str] = []
        self.belief: dict[str, dict[str, str]] = {}
        self.pending: dict[str, list[str]] = {}
        self.answered: dict[str, list[str]] = {}
        self.committed: dict[str, Optional[dict[str, str]]] = {}
        self.last_informed: dict[str, tuple[str, str]] = {}
        self.last_user_acts: list[DialogueAct] = []
        self.turn = 0

    def _touch(self, domain: str) -> None:
        if domain not in self.belief:
            self.belief[domain] = {}
            self.pending[domain] = []
            self.answered[domain] = []
            self.committed[domain] = None
            self.domain_order.append(domain)

    def observe(self, user_acts: Sequence[DialogueAct]) -> None:
        self.last_user_acts = list(user_acts)
        for act in user_acts:
            if act.is_general or act.slot is None:
                continue
            self._touch(act.domain)
            if act.intent == "inform":
                self.belief[act.domain][act.slot] = act.value
                if act.value != DONTCARE:
                    self.last_informed[act.domain] = (act.domain, act.slot)
                entity = self.committed.get(act.domain)
                if entity is not None and act.value != DONTCARE \
                        and entity.get(act.slot) != act.value:
                    self.committed[act.domain] = None
                    for slot in self.answered[act.domain]:
                        if slot not in self.pending[act.domain]:
                            self.pending[act.domain].append(slot)
                    self.answered[act.domain] = []
            elif act.intent == "request":
                if act.slot not in self.pending[act.domain]:
                    self.pending[act.domain].append(act.slot)
        self.turn += 1

    def domain_at(self, di: int) -> Optional[str]:
        return self.domain_order[di] if di < len(self.domain_order) else None

    def slot_at(self, domain: str, si: int) -> Optional[str]:
        names = self.slot_names.get(domain, [])
        return names[si] if si < len(names) else None

    def slot_index(self, domain: str, slot: str) -> Optional[int]:
        names = self.slot_names.get(domain, [])
        try:
            return names.index(slot)
        except ValueError:
            return None

    def constraints(self, domain: str) -> dict[str, str]:
        spec = self.ontology.domain(domain)
        return {s: v for s, v in self.belief.get(domain, {}).items()
                if s in spec.informable or v == DONTCARE}

    def match_bucket(self, domain: str) -> int:
        n = len(self.db.match(domain, self.constraints(domain)))
        if n == 0:
            return 0
        if n == 1:
            return 1
        if n <= 4:
            return 2
        return 3


def state_width(l_d: int, l_s: int) -> int:
    # inform/request act grid + thank/bye bits + belief grid + match buckets
    # + booking flags + turn buckets.
    return 2 * l_d * l_s + 2 + l_d * l_s + 4 * l_d + l_d + len(_TURN_BUCKETS)


def featurize(tracker: SystemStateTracker) -> np.ndarray:
    l_d, l_s = tracker.l_d, tracker.l_s
    v = np.zeros(state_width(l_d, l_s), dtype=np.float64)
    grid = l_d * l_s

    def didx(domain: str) -> Optional[int]:
        try:
            i = tracker.domain_order.index(domain)
        except ValueError:
            return None
        return i if i < l_d else None

    for act in tracker.last_user_acts:
        if act.is_general:
            if act.intent == "thank":
                v[2 * grid] = 1.0
            elif act.intent == "bye":
                v[2 * grid + 1] = 1.0
            continue
        di = didx(act.domain)
        si = tracker.slot_index(act.domain, act.slot) if act.slot else None
        if di is None or si is None:
            continue
        if act.intent == "inform":
            v[di * l_s + si] = 1.0
        elif act.intent == "request":
            v[grid + di * l_s + si] = 1.0
    base = 2 * grid + 2
    for domain, slots in tracker.belief.items():
        di = didx(domain)
        if di is None:
            continue
        for slot in slots:
            si = tracker.slot_index(domain, slot)
            if si is not None:
                v[base + di * l_s + si] = 1.0
    base += grid
    for domain in tracker.domain_order[:l_d]:
        di = didx(domain)
        v[base + di * 4 + tracker.match_bucket(domain)] = 1.0
    base += 4 * l_d
    for domain in tracker.domain_order[:l_d]:
        if tracker.committed.get(domain) is not None:
            v[base + didx(domain)] = 1.0
    base += l_d
    for k, (lo, hi) in enumerate(_TURN_BUCKETS):
        if lo <= tracker.turn <= hi:
            v[base + k] = 1.0
            break
    return v


def realize_action(tracker: SystemStateTracker, action: tuple) -> list[DialogueAct]:
    """Ground a delexicalized action; impossible picks realize as no acts."""
    kind = action[0]
    if kind == "reqmore":
        return [DialogueAct("reqmore")]
    if kind == "bye":
        return [DialogueAct("bye")]
    domain = tracker.domain_at(action[1])
    if domain is None:
        return []
    tracker._touch(domain)
    spec = tracker.ontology.domain(domain)
    ks = key_slot(spec)

    def nooffer_acts() -> list[DialogueAct]:
        last = tracker.last_informed.get(domain)
        if last is not None:
            return [DialogueAct("nooffer", domain, last[1],
                                tracker.belief[domain].get(last[1]))]
        return [DialogueAct("nooffer", domain)]

    def commit() -> Optional[dict[str, str]]:
        if tracker.committed.get(domain) is not None:
            return tracker.committed[domain]
        matches = tracker.db.match(domain, tracker.constraints(domain))
        if not matches:
            return None
        tracker.committed[domain] = matches[0]
        return matches[0]

    def offer_acts(entity: dict[str, str]) -> list[DialogueAct]:
        acts = [DialogueAct("recommend", domain, ks, entity[ks])]
        for slot, value in tracker.belief[domain].items():
            if slot == ks or value == DONTCARE or slot not in entity:
                continue
            acts.append(DialogueAct("inform", domain, slot, entity[slot]))
        for slot in tracker.pending[domain]:
            if slot in entity:
                acts.append(DialogueAct("inform", domain, slot, entity[slot]))
                if slot not in tracker.answered[domain]:
                    tracker.answered[domain].append(slot)
        tracker.pending[domain] = []
        return acts

    if kind == "request":
        slot = tracker.slot_at(domain, action[2])
        return [] if slot is None else [DialogueAct("request", domain, slot)]
    if kind == "recommend":
        entity = commit()
        return nooffer_acts() if entity is None else offer_acts(entity)
    if kind == "inform":
        slot = tracker.slot_at(domain, action[2])
        if slot is None:
            return []
        entity = commit()
        if entity is None:
            return nooffer_acts()
        value = entity.get(slot)
        if value is None:
            return []
        if slot in tracker.pending[domain]:
            tracker.pending[domain].remove(slot)
            if slot not in tracker.answered[domain]:
                tracker.answered[domain].append(slot)
        return [DialogueAct("inform", domain, slot, value)]
    if kind == "book":
        entity = tracker.committed.get(domain)
        if entity is None:
            return []
        return [DialogueAct("book", domain, ks, entity[ks])]
    if kind == "nooffer":
        return nooffer_acts()
    raise ValueError(f"unknown action kind {kind!r}")


# -- tiny MLPs with manual gradients ------------------------------------------


def mlp_init(sizes: Sequence[int], seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for i, (fin, fout) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (fin + fout))
        params[f"W{i}"] = rng.uniform(-limit, limit, size=(fin, fout))
        params[f"b{i}"] = np.zeros(fout)
    return params


def mlp_forward(params: dict[str, np.ndarray], x: np.ndarray):
    n_layers = len(params) // 2
    acts = [x]
    h = x
    for i in range(n_layers):
        h = h @ params[f"W{i}"] + params[f"b{i}"]
        if i < n_layers - 1:
            h = np.maximum(h, 0)
        acts.append(h)
    return h, acts


def mlp_backward(params: dict[str, np.ndarray], acts: list[np.ndarray],
                 dout: np.ndarray) -> dict[str, np.ndarray]:
    n_layers = len(params) // 2
    grads = {}
    dh = dout
    for i in reversed(range(n_layers)):
        grads[f"W{i}"] = acts[i].T @ dh
        grads[f"b{i}"] = dh.sum(axis=0)
        if i > 0:
            dh = dh @ params[f"W{i}"].T
            dh = dh * (acts[i] > 0)
    return grads


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# -- the policy agent ---------------------------------------------------------


@dataclass
class PolicyCheckpoint:
    params: dict[str, np.ndarray]
    value_params: dict[str, np.ndarray]
    l_d: int
    l_s: int
    ontology_fingerprint: str
    reward: RewardSpec = field(default_factory=RewardSpec)
    meta: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        tensors = [(f"pi.{k}", v) for k, v in sorted(self.params.items())]
        tensors += [(f"vf.{k}", v) for k, v in sorted(self.value_params.items())]
        header = {
            "l_d": self.l_d,
            "l_s": self.l_s,
            "ontology_fingerprint": self.ontology_fingerprint,
            "reward": {
                "success_reward": self.reward.success_reward,
                "per_turn": self.reward.per_turn,
                "failure_penalty": self.reward.failure_penalty,
                "max_turns": self.reward.max_turns,
            },
            "meta": self.meta,
        }
        write_container(path, POLICY_SCHEMA, header, tensors)

    @classmethod
    def load(cls, path: str | Path, expected_fingerprint: Optional[str] = None
             ) -> "PolicyCheckpoint":
        header, tensors = read_container(path, POLICY_SCHEMA)
        if expected_fingerprint is not None \
                and header["ontology_fingerprint"] != expected_fingerprint:
            raise CheckpointError("policy/ontology fingerprint mismatch")
        params = {k[3:]: v for k, v in tensors.items() if k.startswith("pi.")}
        value_params = {k[3:]: v for k, v in tensors.items() if k.startswith("vf.")}
        return cls(
            params=params,
            value_params=value_params,
            l_d=header["l_d"],
            l_s=header["l_s"],
            ontology_fingerprint=header["ontology_fingerprint"],
            reward=RewardSpec(**header["reward"]),
            meta=header.get("meta", {}),
        )


class SystemPolicyAgent:
    """Plugs a (trained or random) policy into the dialogue loop.

    mode "sample" draws actions from the policy distribution, "greedy" takes
    the argmax, "uniform" ignores the parameters (the random baseline).
    Trajectories are recorded for the trainer.
    """

    def __init__(self, ontology: Ontology, db: EntityDb, ckpt: PolicyCheckpoint,
                 mode: str = "sample"):
        if mode not in ("sample", "greedy", "uniform"):
            raise ValueError(f"unknown mode {mode!r}")
        self.ontology = ontology
        self.db = db
        self.ckpt = ckpt
        self.mode = mode
        self.space = ActionSpace(ontology, ckpt.l_d, ckpt.l_s)

    def start_dialogue(self, seed: Optional[int] = None) -> None:
        self.tracker = SystemStateTracker(self.ontology, self.db, self.ckpt.l_d, self.ckpt.l_s)
        self.rng = make_rng(seed if seed is not None else 0, 0x90)
        self.trajectory: list[dict] = []

    def respond(self, user_acts: Sequence[DialogueAct]) -> list[DialogueAct]:
        self.tracker.observe(user_acts)
        state = featurize(self.tracker)
        logits, _ = mlp_forward(self.ckpt.params, state[None, :])
        logp = log_softmax(logits)[0]
        if self.mode == "uniform":
            action_idx = int(self.rng.integers(len(self.space)))
        elif self.mode == "greedy":
            action_idx = int(np.argmax(logp))
        else:
            probs = np.exp(logp)
            probs /= probs.sum()
            action_idx = int(self.rng.choice(len(probs), p=probs))
        value, _ = mlp_forward(self.ckpt.value_params, state[None, :])
        self.trajectory.append(
            {
                "state": state,
                "action": action_idx,
                "logp": float(logp[action_idx]),
                "value": float(value[0, 0]),
            }
        )
        return realize_action(self.tracker, self.space.actions[action_idx])


def init_policy(ontology: Ontology, seed: int, l_d: int = 6, l_s: int = 10,
                hidden: int = 128, reward: RewardSpec = RewardSpec()) -> PolicyCheckpoint:
    width = state_width(l_d, l_s)
    n_actions = len(ActionSpace(ontology, l_d, l_s))
    return PolicyCheckpoint(
        params=mlp_init((width, hidden, hidden, n_actions), seed),
        value_params=mlp_init((width, hidden, hidden, 1), seed + 1),
        l_d=l_d,
        l_s=l_s,
        ontology_fingerprint=ontology.fingerprint(),
        reward=reward,
    )


def uniform_policy(ontology: Ontology, l_d: int = 6, l_s: int = 10,
                   reward: RewardSpec = RewardSpec()) -> PolicyCheckpoint:
    ckpt = init_policy(ontology, seed=0, l_d=l_d, l_s=l_s, reward=reward)
    for name in list(ckpt.params):
        if name.startswith("W") and name.endswith(str(len(ckpt.params) // 2 - 1)):
            ckpt.params[name] = np.zeros_like(ckpt.params[name])
    ckpt.params[f"b{len(ckpt.params) // 2 - 1}"] *= 0.0
    return ckpt


# -- PPO ----------------------------------------------------------------------


@dataclass
class PPOConfig:
    epochs: int = 30
    dialogues_per_epoch: int = 200
    learning_rate: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    update_epochs: int = 4
    minibatch: int = 256
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    hidden: int = 128
    entropy_floor: float = 1e-3
    seed: int = 0
    max_turns: int = 40


@dataclass
class EpisodeLog:
    n_steps: int
    success: bool
    episode_return: float


def _collect_episode(
    user, agent: SystemPolicyAgent, goal: UserGoal, seed: int,
    db: EntityDb, ontology: Ontology, reward: RewardSpec,
):
    agent_outcome = run_dialogue(user, agent, goal, seed, db, ontology,
                                 max_turns=reward.max_turns)
    steps = agent.trajectory
    T = len(steps)
    rewards = [reward.per_turn] * T
    if T:
        rewards[-1] += reward.success_reward if agent_outcome.success else reward.failure_penalty
    for step, r in zip(steps, rewards):
        step["reward"] = r
    log = EpisodeLog(
        n_steps=T,
        success=agent_outcome.success,
        episode_return=float(sum(rewards)),
    )
    return steps, log, agent_outcome


def _gae(steps: list[dict], gamma: float, lam: float) -> None:
    adv = 0.0
    next_value = 0.0
    for step in reversed(steps):
        delta = step["reward"] + gamma * next_value - step["value"]
        adv = delta + gamma * lam * adv
        step["advantage"] = adv
        step["value_target"] = adv + step["value"]
        next_value = step["value"]


def ppo_update(
    ckpt: PolicyCheckpoint,
    steps: list[dict],
    config: PPOConfig,
    pi_opt: Adam,
    vf_opt: Adam,
    rng: np.random.Generator,
) -> dict:
    """Clipped-surrogate updates over the collected batch; returns stats."""
    X = np.stack([s["state"] for s in steps])
    actions = np.asarray([s["action"] for s in steps], dtype=np.int64)
    logp_old = np.asarray([s["logp"] for s in steps])
    adv = np.asarray([s["advantage"] for s in steps])
    vtarg = np.asarray([s["value_target"] for s in steps])
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    n = len(steps)
    entropy_mean = 0.0
    clip_frac = 0.0
    n_updates = 0
    for _ in range(config.update_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.minibatch):
            idx = order[lo: lo + config.minibatch]
            xb, ab = X[idx], actions[idx]
            advb, vtb, lob = adv[idx], vtarg[idx], logp_old[idx]
            m = len(idx)

            logits, acts_pi = mlp_forward(ckpt.params, xb)
            lsm = log_softmax(logits)
            probs = np.exp(lsm)
            lp = lsm[np.arange(m), ab]
            ratio = np.exp(lp - lob)
            unclipped = ratio * advb
            clipped = np.clip(ratio, 1.0 - config.clip, 1.0 + config.clip) * advb
            active = (unclipped <= clipped).astype(np.float64)
            entropy = -(probs * lsm).sum(axis=1)

            dlp = -(active * ratio * advb) / m
            dlogits = np.zeros_like(logits)
            dlogits[np.arange(m), ab] = dlp
            dlogits -= probs * dlp[:, None]
            dlogits += config.entropy_coef * probs * (lsm + entropy[:, None]) / m
            pi_grads = mlp_backward(ckpt.params, acts_pi, dlogits)
            pi_opt.step(ckpt.params, pi_grads)

            values, acts_vf = mlp_forward(ckpt.value_params, xb)
            dv = config.value_coef * (values[:, 0] - vtb)[:, None] / m
            vf_grads = mlp_backward(ckpt.value_params, acts_vf, dv)
            vf_opt.step(ckpt.value_params, vf_grads)

            entropy_mean += float(entropy.mean())
            clip_frac += float((active == 0.0).mean())
            n_updates += 1
    return {
        "entropy": entropy_mean / max(n_updates, 1),
        "clip_fraction": clip_frac / max(n_updates, 1),
    }


def train_policy(
    make_user: Callable[[], object],
    ontology: Ontology,
    db: EntityDb,
    config: PPOConfig,
    goal_config: Optional[GoalConfig] = None,
    reward: RewardSpec = RewardSpec(),
    goal_domains: Optional[Sequence[str]] = None,
) -> tuple[PolicyCheckpoint, list[dict]]:
    """PPO against a user simulator; returns the policy and per-epoch curve.

    make_user builds (or returns) the user agent; each dialogue gets its own
    derived seeds, so the run is deterministic regardless of scheduling.
    """
    goal_config = goal_config or GoalConfig()
    ckpt = init_policy(ontology, seed=config.seed, hidden=config.hidden, reward=reward)
    agent = SystemPolicyAgent(ontology, db, ckpt, mode="sample")
    pi_opt = Adam(ckpt.params, lr=config.learning_rate)
    vf_opt = Adam(ckpt.value_params, lr=config.learning_rate)
    user = make_user()
    curve: list[dict] = []
    for epoch in range(config.epochs):
        all_steps: list[dict] = []
        logs: list[EpisodeLog] = []
        for i in range(config.dialogues_per_epoch):
            goal = sample_goal(ontology, make_rng(config.seed, epoch, i, 0), goal_config,
                               domains=goal_domains)
            dlg_seed = int(make_rng(config.seed, epoch, i, 1).integers(2**31))
            steps, log, _ = _collect_episode(user, agent, goal, dlg_seed, db, ontology, reward)
            _gae(steps, config.gamma, config.gae_lambda)
            all_steps.extend(steps)
            logs.append(log)
        success_rate = float(np.mean([l.success for l in logs])) if logs else float("nan")
        avg_return = float(np.mean([l.episode_return for l in logs])) if logs else float("nan")
        if not np.isfinite(success_rate):
            raise TrainingAbort("success rate went non-finite", {"epoch": epoch})
        stats = {}
        if all_steps:
            stats = ppo_update(ckpt, all_steps, config, pi_opt, vf_opt,
                               make_rng(config.seed, 0xBB, epoch))
            if stats["entropy"] < config.entropy_floor:
                raise TrainingAbort(
                    "policy entropy collapsed",
                    {"epoch": epoch, "entropy": stats["entropy"]},
                )
        curve.append(
            {
                "epoch": epoch,
                "success_rate": success_rate,
                "avg_return": avg_return,
                "avg_turns": float(np.mean([l.n_steps for l in logs])) if logs else 0.0,
                **stats,
            }
        )
    ckpt.meta["curve_final_success"] = curve[-1]["success_rate"] if curve else None
    return ckpt, curve


def evaluate_policy(
    ckpt: PolicyCheckpoint,
    make_user: Callable[[], object],
    ontology: Ontology,
    db: EntityDb,
    n_dialogues: int,
    seed: int,
    goal_config: Optional[GoalConfig] = None,
    goal_domains: Optional[Sequence[str]] = None,
    mode: str = "sample",
    reward: RewardSpec = RewardSpec(),
) -> dict:
    """Seeded evaluation; logs per-episode turns/success/return for auditing."""
    goal_config = goal_config or GoalConfig()
    agent = SystemPolicyAgent(ontology, db, ckpt, mode=mode)
    user = make_user()
    episodes = []
    per_domain_hits: dict[str, list[bool]] = {}
    for i in range(n_dialogues):
        goal = sample_goal(ontology, make_rng(seed, i, 0), goal_config, domains=goal_domains)
        dlg_seed = int(make_rng(seed, i, 1).integers(2**31))
        steps, log, outcome = _collect_episode(user, agent, goal, dlg_seed, db, ontology, reward)
        episodes.append({"turns": log.n_steps, "success": log.success,
                         "return": log.episode_return})
        for domain, ok in outcome.per_domain.items():
            per_domain_hits.setdefault(domain, []).append(ok)
    return {
        "n_dialogues": n_dialogues,
        "success_rate": float(np.mean([e["success"] for e in episodes])) if episodes else None,
        "avg_turns": float(np.mean([e["turns"] for e in episodes])) if episodes else None,
        "avg_return": float(np.mean([e["return"] for e in episodes])) if episodes else None,
        "per_domain_success": {
            d: float(np.mean(v)) for d, v in sorted(per_domain_hits.items())
        },
        "episodes": episodes,
        "seed": seed,
    }
