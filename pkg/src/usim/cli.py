"""Command-line entry point wiring the toolkit into reproducible pipelines.

Every randomized subcommand requires --seed; every run writes its resolved
configuration and artifacts into a run directory so that re-running from the
saved config reproduces the reported numbers bit for bit. Log lines are
timestamp-free JSON for the same reason.

Exit codes: 0 ok, 2 usage or configuration error, 3 schema or validation
error, 4 training abort, 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from .agent import NeuralUserSimulator, TrainConfig, train_supervised
from .baselines import AgendaConfig, AgendaUserSimulator, EntityDb, RuleSystemAgent, build_db
from .corpus import (
    CorpusError,
    extract_targets,
    generate_corpus,
    leave_one_out_split,
    load_corpus,
    make_split,
    save_corpus,
    select,
)
from .dialogue import GoalConfig, sample_goal
from .evalkit import corpus_fit
from .experiments import cross_model_gaps, run_ablation, run_cross_model, run_zero_shot
from .features import FeatureLayout
from .net import (
    Checkpoint,
    CheckpointError,
    NetConfig,
    NetError,
    TrainingAbort,
    load_checkpoint,
    save_checkpoint,
)
from .ontology import DialogueAct, Ontology, OntologyError, make_toy_ontology
from .policy import PPOConfig, PolicyCheckpoint, SystemPolicyAgent, train_policy
from .sim import run_dialogue
from .util import make_rng, read_json, svg_line_chart, write_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SCHEMA = 3
EXIT_TRAINING = 4


class RunLog:
    def __init__(self, path: Path):
        self.path = path
        self.events: list[dict] = []

    def log(self, event: str, **fields) -> None:
        row = {"event": event, **fields}
        self.events.append(row)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _run_dir(args, name: str) -> Path:
    if getattr(args, "run_dir", None):
        path = Path(args.run_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path(getattr(args, "out", ".") or ".") / f"{name}-{stamp}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dump_config(run_dir: Path, args, name: str) -> RunLog:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    config["subcommand"] = name
    write_json(run_dir / "resolved_config.json", config)
    return RunLog(run_dir / "log.jsonl")


def _load_ontology(path: str) -> Ontology:
    return Ontology.load(path)


def _goal_config(args) -> GoalConfig:
    return GoalConfig(
        min_domains=args.min_domains,
        max_domains=args.max_domains,
        min_constraints=args.min_constraints,
        max_constraints=args.max_constraints,
        min_requests=args.min_requests,
        max_requests=args.max_requests,
    )


def _add_goal_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--min-domains", type=int, default=1)
    p.add_argument("--max-domains", type=int, default=2)
    p.add_argument("--min-constraints", type=int, default=1)
    p.add_argument("--max-constraints", type=int, default=2)
    p.add_argument("--min-requests", type=int, default=1)
    p.add_argument("--max-requests", type=int, default=2)


def _agenda_config(args) -> AgendaConfig:
    weights = None
    if getattr(args, "pop_weights", None):
        weights = tuple(float(x) for x in args.pop_weights.split(","))
    return AgendaConfig(
        max_pop=getattr(args, "max_pop", 3),
        pop_weights=weights,
        thank_prob=getattr(args, "thank_prob", 0.1),
        order_jitter=getattr(args, "order_jitter", 0.5),
    )


def _net_config(args, seed: int) -> NetConfig:
    return NetConfig(
        d_model=args.d_model,
        n_layers=args.layers,
        n_heads=args.heads,
        ff_dim=args.ff_dim,
        dropout=args.dropout,
        learning_rate=args.lr,
        seed=seed,
        dtype=args.dtype,
        use_domain_loss=not args.no_domain_loss,
    )


def _add_net_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d-model", type=int, default=100)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ff-dim", type=int, default=400)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--no-domain-loss", action="store_true")
    p.add_argument("--no-index", action="store_true")
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)


def _make_user(args, ontology: Ontology):
    """User factory from --user: 'agenda' or a trained checkpoint path."""
    spec = args.user
    if spec == "agenda":
        config = _agenda_config(args)
        return lambda: AgendaUserSimulator(ontology, config)
    ckpt = load_checkpoint(spec, expected_fingerprint=ontology.fingerprint())
    return lambda: NeuralUserSimulator(ontology, ckpt)


# -- subcommands ---------------------------------------------------------------


def cmd_make_ontology(args) -> int:
    onto = make_toy_ontology()
    onto.save(args.out)
    print(f"wrote {args.out} ({len(onto.domains)} domains)")
    return EXIT_OK


def cmd_make_db(args) -> int:
    onto = _load_ontology(args.ontology)
    db = build_db(onto, seed=args.seed, entities_per_domain=args.entities)
    db.save(args.out)
    print(f"wrote {args.out} ({args.entities} entities per domain)")
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    run_dir = _run_dir(args, "gen-corpus")
    log = _dump_config(run_dir, args, "gen-corpus")
    onto = _load_ontology(args.ontology)
    db = EntityDb.load(args.db, onto)
    user = AgendaUserSimulator(onto, _agenda_config(args))
    system = RuleSystemAgent(onto, db)
    goal_domains = args.goal_domains.split(",") if args.goal_domains else None
    dialogues, stats = generate_corpus(
        onto, user, system, args.n, seed=args.seed, db=db,
        goal_config=_goal_config(args), max_turns=args.max_turns,
        goal_domains=goal_domains,
    )
    corpus_path = run_dir / "corpus.jsonl"
    save_corpus(corpus_path, dialogues)
    write_json(run_dir / "corpus_stats.json", stats)
    log.log("corpus_written", path=str(corpus_path), **stats)
    print(f"wrote {corpus_path}: {stats}")
    return EXIT_OK


def cmd_train_us(args) -> int:
    run_dir = _run_dir(args, "train-us")
    log = _dump_config(run_dir, args, "train-us")
    onto = _load_ontology(args.ontology)
    dialogues, diags = load_corpus(args.corpus, onto)
    for d in diags:
        log.log("corpus_skip", detail=d)
    net_config = _net_config(args, args.seed)
    train_config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, window=args.window, seed=args.seed,
    )
    layout = FeatureLayout.for_ontology(onto, include_index=not args.no_index)
    split = None
    if args.holdout:
        split = leave_one_out_split(dialogues, args.holdout, onto)
        write_json(run_dir / "split.json", split.to_dict())
    ckpt, history = train_supervised(dialogues, onto, net_config, train_config,
                                     layout=layout, split=split)
    ckpt_path = run_dir / "checkpoint.tusnet"
    save_checkpoint(ckpt_path, ckpt)
    write_json(run_dir / "history.json", history)
    svg_line_chart(
        {"dev_turn_accuracy": [h["dev_turn_accuracy"] for h in history],
         "train_loss": [h["train_loss"] for h in history]},
        run_dir / "history.svg", title="supervised training", y_label="value",
    )
    log.log("trained", best_epoch=ckpt.meta["best_epoch"],
            best_dev_turn_accuracy=ckpt.meta["best_dev_turn_accuracy"])
    print(f"wrote {ckpt_path} (best dev ACC "
          f"{ckpt.meta['best_dev_turn_accuracy']:.4f} at epoch {ckpt.meta['best_epoch']})")
    return EXIT_OK


def cmd_eval_us_corpus(args) -> int:
    run_dir = _run_dir(args, "eval-us-corpus")
    _dump_config(run_dir, args, "eval-us-corpus")
    onto = _load_ontology(args.ontology)
    ckpt = load_checkpoint(args.checkpoint, expected_fingerprint=onto.fingerprint())
    dialogues, _ = load_corpus(args.corpus, onto)
    if args.dev_only:
        split = make_split(dialogues)
        dialogues = select(dialogues, split.dev_ids) or dialogues
    report = corpus_fit(ckpt, dialogues, onto)
    write_json(run_dir / "corpus_fit.json", report.to_dict())
    with open(run_dir / "corpus_fit.csv", "w", encoding="utf-8") as fh:
        fh.write("precision,recall,f1,turn_accuracy,first_turn_len\n")
        fh.write(f"{report.precision},{report.recall},{report.f1},"
                 f"{report.turn_accuracy},{report.first_turn_len}\n")
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_simulate(args) -> int:
    run_dir = _run_dir(args, "simulate")
    log = _dump_config(run_dir, args, "simulate")
    onto = _load_ontology(args.ontology)
    db = EntityDb.load(args.db, onto)
    make_user = _make_user(args, onto)
    if args.policy:
        pol = PolicyCheckpoint.load(args.policy, expected_fingerprint=onto.fingerprint())
        system = SystemPolicyAgent(onto, db, pol, mode=args.policy_mode)
    else:
        system = RuleSystemAgent(onto, db)
    goal_config = _goal_config(args)
    user = make_user()
    rows = []
    n_success = 0
    for i in range(args.n):
        goal = sample_goal(onto, make_rng(args.seed, i, 0), goal_config)
        out = run_dialogue(user, system, goal,
                           seed=int(make_rng(args.seed, i, 1).integers(2**31)),
                           db=db, ontology=onto, max_turns=args.max_turns)
        n_success += out.success
        rows.append({
            "id": f"sim{i:05d}",
            "success": out.success,
            "turns": out.n_turns,
            "goal": out.goal_final.to_dict(),
            "exchanges": [
                [[a.to_list() for a in ex.system_acts], [a.to_list() for a in ex.user_acts]]
                for ex in out.exchanges
            ],
        })
    from .util import write_jsonl

    write_jsonl(run_dir / "transcripts.jsonl", rows)
    stats = {"n": args.n, "success_rate": n_success / args.n if args.n else None}
    write_json(run_dir / "stats.json", stats)
    log.log("simulated", **stats)
    print(f"success rate: {stats['success_rate']}")
    return EXIT_OK


def cmd_train_policy(args) -> int:
    run_dir = _run_dir(args, "train-policy")
    log = _dump_config(run_dir, args, "train-policy")
    onto = _load_ontology(args.ontology)
    db = EntityDb.load(args.db, onto)
    make_user = _make_user(args, onto)
    config = PPOConfig(
        epochs=args.epochs, dialogues_per_epoch=args.dialogues,
        learning_rate=args.lr, seed=args.seed, hidden=args.hidden,
        max_turns=args.max_turns,
    )
    ckpt, curve = train_policy(make_user, onto, db, config, goal_config=_goal_config(args))
    ckpt.save(run_dir / "policy.ckpt")
    write_json(run_dir / "curve.json", curve)
    svg_line_chart({"success_rate": [c["success_rate"] for c in curve]},
                   run_dir / "curve.svg", title="policy training", y_label="success rate")
    log.log("trained", final_success=curve[-1]["success_rate"] if curve else None)
    print(f"final training success rate: {curve[-1]['success_rate'] if curve else None}")
    return EXIT_OK


def cmd_cross_eval(args) -> int:
    run_dir = _run_dir(args, "cross-eval")
    log = _dump_config(run_dir, args, "cross-eval")
    onto = _load_ontology(args.ontology)
    db = EntityDb.load(args.db, onto)
    us_ckpt = load_checkpoint(args.user_sim, expected_fingerprint=onto.fingerprint())
    simulators = {
        "agenda": ("agenda", _agenda_config(args)),
        "neural": ("neural", us_ckpt),
    }
    seeds = [int(s) for s in args.seeds.split(",")]
    config = PPOConfig(epochs=args.epochs, dialogues_per_epoch=args.dialogues,
                       learning_rate=args.lr, hidden=args.hidden, max_turns=args.max_turns)
    result = run_cross_model(simulators, onto, db, config, seeds,
                             n_eval=args.n_eval, goal_config=_goal_config(args),
                             jobs=args.jobs)
    matrix = result["matrix"]
    gaps = cross_model_gaps(matrix)
    write_json(run_dir / "cross_model.json", {"matrix": matrix, "gaps": gaps})
    with open(run_dir / "cross_model.csv", "w", encoding="utf-8") as fh:
        fh.write("trained_on,evaluated_on,success_mean,success_stderr\n")
        for tr, row in matrix.items():
            for ev, cell in row.items():
                if ev.startswith("__"):
                    continue
                fh.write(f"{tr},{ev},{cell['mean']},{cell['stderr']}\n")
    log.log("cross_eval_done", **gaps)
    print(json.dumps({"matrix": {k: {e: c.get("mean") for e, c in v.items()}
                                 for k, v in matrix.items()}, "gaps": gaps},
                     indent=2, sort_keys=True))
    return EXIT_OK


def cmd_zero_shot(args) -> int:
    run_dir = _run_dir(args, "zero-shot")
    log = _dump_config(run_dir, args, "zero-shot")
    onto = _load_ontology(args.ontology)
    db = EntityDb.load(args.db, onto)
    dialogues, _ = load_corpus(args.corpus, onto)
    domains = args.domains.split(",") if args.domains else list(onto.domain_names())
    seeds = [int(s) for s in args.seeds.split(",")]
    net_config = _net_config(args, args.seed)
    train_config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                               window=args.window, seed=args.seed)
    ppo = PPOConfig(epochs=args.ppo_epochs, dialogues_per_epoch=args.ppo_dialogues,
                    learning_rate=args.ppo_lr, max_turns=args.max_turns)
    report = run_zero_shot(dialogues, onto, db, domains, net_config, train_config,
                           ppo, seeds, n_eval=args.n_eval, goal_config=_goal_config(args))
    write_json(run_dir / "zero_shot.json", report)
    with open(run_dir / "zero_shot.csv", "w", encoding="utf-8") as fh:
        fh.write("held_out_domain,removed_fraction,held_out_success,full_success_on_domain,delta\n")
        for d, row in report["held_out"].items():
            fh.write(f"{d},{row['removed_fraction']},{row['held_out_success']},"
                     f"{row['full_success_on_domain']},{row['delta_vs_full']}\n")
    log.log("zero_shot_done")
    print(json.dumps(report["held_out"], indent=2, sort_keys=True))
    return EXIT_OK


def cmd_ablation(args) -> int:
    run_dir = _run_dir(args, "ablation")
    log = _dump_config(run_dir, args, "ablation")
    onto = _load_ontology(args.ontology)
    dialogues, _ = load_corpus(args.corpus, onto)
    net_config = _net_config(args, args.seed)
    train_config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                               window=args.window, seed=args.seed)
    result = run_ablation(dialogues, onto, net_config, train_config)
    summary = result["summary"]
    write_json(run_dir / "ablation.json", summary)
    with open(run_dir / "ablation.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,precision,recall,f1,turn_accuracy,first_turn_len\n")
        for name, rep in summary["variants"].items():
            fh.write(f"{name},{rep['precision']},{rep['recall']},{rep['f1']},"
                     f"{rep['turn_accuracy']},{rep['first_turn_len']}\n")
    log.log("ablation_done", len_relative_drop=summary["len_relative_drop"])
    print(json.dumps({k: v for k, v in summary.items() if k != "variants"},
                     indent=2, sort_keys=True))
    return EXIT_OK


def cmd_dump_features(args) -> int:
    onto = _load_ontology(args.ontology)
    dialogues, _ = load_corpus(args.corpus, onto)
    wanted = {d.id: d for d in dialogues}
    if args.dialogue_id not in wanted:
        raise CorpusError(f"dialogue {args.dialogue_id!r} not in corpus")
    layout = FeatureLayout.for_ontology(onto, include_index=not args.no_index)
    extracted = extract_targets(wanted[args.dialogue_id], onto, layout, window=args.window)
    out = []
    for ex in extracted.examples:
        if args.turn is not None and ex.turn != args.turn:
            continue
        out.append({
            "turn": ex.turn,
            "slots": [list(s) for s in ex.slot_ids],
            "targets": ex.targets.tolist(),
            "y_cls": ex.y_cls.tolist(),
            "rows": ex.sequence.blocks[0].tolist(),
        })
    payload = {"dialogue_id": args.dialogue_id, "width": layout.width, "turns": out}
    if args.out:
        write_json(args.out, payload)
        print(f"wrote {args.out}")
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def _parse_chat_act(line: str, onto: Ontology) -> DialogueAct:
    line = line.strip()
    if line.startswith("general.") or line.startswith("general-"):
        return DialogueAct(line.split(".", 1)[-1].split("-", 1)[-1])
    parts = line.split()
    if len(parts) == 2 and "=" not in parts[1]:
        return DialogueAct(parts[0], parts[1])
    if len(parts) != 3:
        raise ValueError(
            "expected 'general.<intent>', '<intent> <domain>' or "
            "'<intent> <domain> <slot>[=<value>]'"
        )
    intent, domain, rest = parts
    if "=" in rest:
        slot, value = rest.split("=", 1)
    else:
        slot, value = rest, None
    return DialogueAct(intent, domain, slot, value)


def cmd_plot_curves(args) -> int:
    """Render per-epoch curves from one or more curve/history JSON files."""
    series: dict[str, list[float]] = {}
    for path in args.curves:
        rows = read_json(path)
        label = Path(path).parent.name or Path(path).stem
        for key in args.keys.split(","):
            vals = [row[key] for row in rows if key in row]
            if vals:
                series[f"{label}:{key}"] = vals
    if not series:
        print("error: no matching keys in the given curve files", file=sys.stderr)
        return EXIT_CONFIG
    svg_line_chart(series, args.out, title=args.title, y_label=args.keys)
    print(f"wrote {args.out} ({len(series)} series)")
    return EXIT_OK


def cmd_chat(args) -> int:
    onto = _load_ontology(args.ontology)
    ckpt = load_checkpoint(args.checkpoint, expected_fingerprint=onto.fingerprint())
    sim = NeuralUserSimulator(onto, ckpt)
    goal = sample_goal(onto, make_rng(args.seed, 0), GoalConfig())
    sim.start_dialogue(goal, seed=args.seed)
    print(f"goal: {goal}")
    print("you are the system; one act per line ('recommend lodging area=south',")
    print("'general.reqmore'); empty line sends the turn, 'quit' exits")
    pending: list[DialogueAct] = []
    acts, done = sim.step([])
    print("user:", "; ".join(str(a) for a in acts) or "(silence)")
    for line in sys.stdin:
        line = line.strip()
        if line == "quit":
            break
        if line:
            try:
                act = _parse_chat_act(line, onto)
                onto.validate_act(act, "system")
            except (ValueError, OntologyError) as exc:
                print(f"parse error: {exc}")
                continue
            pending.append(act)
            continue
        acts, done = sim.step(pending)
        pending = []
        print("user:", "; ".join(str(a) for a in acts) or "(silence)")
        if done:
            print("(dialogue finished)")
            break
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="usim", description="User-simulation toolkit for task-oriented dialogue"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-ontology", help="write the bundled toy ontology")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_ontology)

    p = sub.add_parser("make-db", help="generate an entity database")
    p.add_argument("--ontology", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--entities", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_db)

    p = sub.add_parser("gen-corpus", help="simulate a corpus with the baseline agents")
    p.add_argument("--ontology", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--run-dir")
    p.add_argument("--max-turns", type=int, default=40)
    p.add_argument("--max-pop", type=int, default=3)
    p.add_argument("--pop-weights")
    p.add_argument("--thank-prob", type=float, default=0.1)
    p.add_argument("--order-jitter", type=float, default=0.5)
    p.add_argument("--goal-domains")
    _add_goal_args(p)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train-us", help="supervised training of the user simulator")
    p.add_argument("--ontology", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--run-dir")
    p.add_argument("--holdout", help="leave-one-domain-out split domain")
    _add_net_args(p)
    p.set_defaults(func=cmd_train_us)

    p = sub.add_parser("eval-us-corpus", help="teacher-forced corpus fit of a checkpoint")
    p.add_argument("--ontology", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev-only", action="store_true")
    p.add_argument("--out", default=".")
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_eval_us_corpus)

    p = sub.add_parser("simulate", help="run seeded dialogues user-vs-system")
    p.add_argument("--ontology", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--user", default="agenda", help="'agenda' or a tusnet checkpoint path")
    p.add_argument("--policy", help="policy checkpoint (default: rule system)")
    p.add_argument("--policy-mode", choices=("sample", "greedy"), default="sample")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--max-turns", type=int, default=40)
    p.add_argument("--max-pop", type=int, default=3)
    p.add_argument("--pop-weights")
    p.add_argument("--thank-prob", type=float, default=0.1)
    p.add_argument("--order-jitter", type=float, default=0.5)
    p.add_argument("--out", default=".")
    p.add_argument("--run-dir")
    _add_goal_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-policy", help="PPO training against a user simulator")
    p.add_argument("--ontology", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--user", default="agenda")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--dialogues", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--max-turns", type=int, default=40)
    p.add_argument("--max-pop", type=int, default=3)
    p.add_argument("--pop-weights")
    p.add_argument("--thank-prob", type=float, default=0.1)
    p.add_argument("--order-jitter", type=float, default=0.5)
    p.add_argument("--out", default=".")
    p.add_argument("--run-dir")
    _add_goal_args(p)
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("cross-eval", help="cross-model success matrix")
    p.add_argument("--ontology", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--user-sim", required=True, help="trained tusnet checkpoint")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--jobs", type=int, default=1, help="worker cap for evaluation cells")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--dialogues", type=int, default=150)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--n-eval", type=int, default=500)
    p.add_argument("--max-turns", type=int, default=40)
    p.add_argument("--max-pop", type=int, default=3)
    p.add_argument("--pop-weights")
    p.add_argument("--thank-prob", type=float, default=0.1)
    p.add_argument("--order-jitter", type=float, default=0.5)
    p.add_argument("--out", default=".")
    p.add_argument("--run-dir")
    _add_goal_args(p)
    p.set_defaults(func=cmd_cross_eval)

    p = sub.add_parser("zero-shot", help="leave-one-domain-out transfer experiment")
    p.add_argument("--ontology", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--domains", help="comma list; default: all")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ppo-epochs", type=int, default=15)
    p.add_argument("--ppo-dialogues", type=int, default=150)
    p.add_argument("--ppo-lr", type=float, default=1e-3)
    p.add_argument("--n-eval", type=int, default=200)
    p.add_argument("--max-turns", type=int, default=40)
    p.add_argument("--out", default=".")
    p.add_argument("--run-dir")
    _add_net_args(p)
    _add_goal_args(p)
    p.set_defaults(func=cmd_zero_shot)

    p = sub.add_parser("ablation", help="basic / index / domain-loss comparison")
    p.add_argument("--ontology", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--run-dir")
    _add_net_args(p)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("dump-features", help="emit per-turn feature matrices as JSON")
    p.add_argument("--ontology", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--dialogue-id", required=True)
    p.add_argument("--turn", type=int)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--no-index", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_features)

    p = sub.add_parser("plot-curves", help="render per-epoch curves as an SVG chart")
    p.add_argument("curves", nargs="+", help="curve/history JSON files")
    p.add_argument("--keys", default="success_rate")
    p.add_argument("--title", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_curves)

    p = sub.add_parser("chat", help="type system acts against a trained simulator")
    p.add_argument("--ontology", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_chat)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OntologyError, CorpusError, CheckpointError, NetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except TrainingAbort as exc:
        print(f"training aborted: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_TRAINING
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
