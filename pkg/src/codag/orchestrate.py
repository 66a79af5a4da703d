"""The continual loop over a domain sequence, plus baselines and ablations.

Stage 0 trains the generalization model on the labeled source. Every later
stage adapts a copy of the previous generalization model to the new target,
exports pseudo-labels, continues the generalization model on them plus the
replay buffer, then refreshes the buffer. Variants rewire single steps:

* da-only / dg-only: naive single-model chains (both matrix roles mirror it),
* codag-no-buffer: replay capacity forced to zero,
* codag-no-selnlpl: noisy-label schedule disabled,
* codag-da-init: the adaptation model continues from its own previous
  parameters instead of the generalization model's.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .adapt import AdaptConfig, adapt_domain, generate_pseudo_labels
from .augment import AugmentConfig
from .data import DomainSequence, SequenceConfig
from .evaluate import AccuracyMatrix, CurveLog, MetricsReport, accuracy
from .generalize import DGConfig, train_dg_source, train_dg_target
from .nnmodel import (
    ClassifierParams,
    ModelConfig,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .replay import ReplayBuffer, update_buffer
from .rng import RngStreams, substream

VARIANTS = (
    "codag",
    "da-only",
    "dg-only",
    "codag-no-buffer",
    "codag-no-selnlpl",
    "codag-da-init",
)

STATE_VERSION = 1


class StageOrderError(RuntimeError):
    """Stages must run in sequence order, each exactly once."""


@dataclass
class ExperimentConfig:
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    domain_order: list[int] | None = None  # visit order of targets; None = natural
    seeds: tuple[int, ...] = (2022, 2023, 2024)
    variant: str = "codag"
    model: ModelConfig = field(default_factory=ModelConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    dg: DGConfig = field(default_factory=DGConfig)
    aug: AugmentConfig = field(default_factory=AugmentConfig)
    buffer_capacity: int = 200
    out_dir: str | None = None
    log_curves: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.buffer_capacity < 0:
            raise ValueError("buffer_capacity must be nonnegative")

    def normalized(self) -> "ExperimentConfig":
        """Variant knobs folded into the plain fields."""
        cfg = self
        if cfg.variant in ("codag-no-buffer", "da-only"):
            cfg = replace(cfg, buffer_capacity=0)
        if cfg.variant == "codag-no-selnlpl":
            cfg = replace(cfg, dg=replace(cfg.dg, selnlpl=False))
        return cfg

    def to_dict(self) -> dict:
        return {
            "sequence": self.sequence.to_dict(),
            "domain_order": list(self.domain_order) if self.domain_order else None,
            "seeds": list(self.seeds),
            "variant": self.variant,
            "model": {"hidden": list(self.model.hidden), "feat_dim": self.model.feat_dim},
            "adapt": asdict(self.adapt),
            "dg": asdict(self.dg),
            "aug": asdict(self.aug),
            "buffer_capacity": self.buffer_capacity,
            "log_curves": self.log_curves,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        kwargs = dict(raw)
        kwargs.pop("out_dir", None)
        if "sequence" in kwargs:
            kwargs["sequence"] = SequenceConfig.from_dict(kwargs["sequence"])
        if "seeds" in kwargs:
            kwargs["seeds"] = tuple(kwargs["seeds"])
        if "model" in kwargs:
            model = dict(kwargs["model"])
            if "hidden" in model:
                model["hidden"] = tuple(model["hidden"])
            kwargs["model"] = ModelConfig(**model)
        if "adapt" in kwargs:
            kwargs["adapt"] = AdaptConfig(**kwargs["adapt"])
        if "dg" in kwargs:
            kwargs["dg"] = DGConfig(**kwargs["dg"])
        if "aug" in kwargs:
            kwargs["aug"] = AugmentConfig(**kwargs["aug"])
        return cls(**kwargs)


def config_digest(config: ExperimentConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class RunState:
    seed: int
    n_domains: int
    next_stage: int
    buffer: ReplayBuffer
    da_matrix: AccuracyMatrix
    dg_matrix: AccuracyMatrix
    curves: CurveLog
    dg_params: ClassifierParams | None = None
    da_params: ClassifierParams | None = None


def new_run_state(seed: int, seq: DomainSequence, buffer_capacity: int) -> RunState:
    n = seq.n_domains
    return RunState(
        seed=seed,
        n_domains=n,
        next_stage=0,
        buffer=ReplayBuffer(buffer_capacity, seq.k),
        da_matrix=AccuracyMatrix(n, "da"),
        dg_matrix=AccuracyMatrix(n, "dg"),
        curves=CurveLog(),
    )


def _eval_row(params: ClassifierParams, seq: DomainSequence) -> list[float]:
    return [accuracy(params, test) for test in seq.test_sets]


def run_stage(state: RunState, t: int, seq: DomainSequence, config: ExperimentConfig,
              ckpt_dir=None) -> RunState:
    """Execute stage t in place; records one row of each accuracy matrix."""
    if t != state.next_stage:
        raise StageOrderError(f"expected stage {state.next_stage}, got {t}")
    if t >= seq.n_domains:
        raise StageOrderError(f"stage {t} beyond the sequence horizon")
    variant = config.variant
    streams = RngStreams.for_stage(state.seed, t)

    on_epoch = None
    if config.log_curves:
        def on_epoch(epoch, params, mean_loss, phase, _t=t):
            state.curves.append(_t, epoch, _eval_row(params, seq))

    if t == 0:
        model = replace(config.model, d=seq.d, k=seq.k)
        params0 = init_params(model, substream(state.seed, "init"))
        aug = None if variant == "da-only" else config.aug
        dg = train_dg_source(params0, seq.train_sets[0], config.dg, aug, streams, on_epoch)
        state.dg_params = dg
        row = _eval_row(dg, seq)
        state.dg_matrix.set_row(0, row)
        state.da_matrix.set_row(0, row)  # no adaptation model exists yet
        if config.buffer_capacity > 0:
            state.buffer = update_buffer(state.buffer, seq.train_sets[0], dg)
    elif variant == "da-only":
        adapted = adapt_domain(state.dg_params, seq.train_sets[t], config.adapt,
                               streams.shuffle)
        state.dg_params = adapted
        state.da_params = adapted
        row = _eval_row(adapted, seq)
        state.da_matrix.set_row(t, row)
        state.dg_matrix.set_row(t, row)
    elif variant == "dg-only":
        pl = generate_pseudo_labels(state.dg_params, seq.train_sets[t])
        dg = train_dg_target(state.dg_params, pl, state.buffer, config.dg, config.aug,
                             streams, on_epoch)
        state.dg_params = dg
        if config.buffer_capacity > 0:
            state.buffer = update_buffer(state.buffer, pl, dg)
        row = _eval_row(dg, seq)
        state.da_matrix.set_row(t, row)
        state.dg_matrix.set_row(t, row)
    else:
        da_init = state.dg_params
        if variant == "codag-da-init" and state.da_params is not None:
            da_init = state.da_params
        da = adapt_domain(da_init, seq.train_sets[t], config.adapt, streams.shuffle)
        pl = generate_pseudo_labels(da, seq.train_sets[t])
        dg = train_dg_target(state.dg_params, pl, state.buffer, config.dg, config.aug,
                             streams, on_epoch)
        state.da_params = da
        state.dg_params = dg
        if config.buffer_capacity > 0:
            state.buffer = update_buffer(state.buffer, pl, dg)
        state.da_matrix.set_row(t, _eval_row(da, seq))
        state.dg_matrix.set_row(t, _eval_row(dg, seq))

    if ckpt_dir is not None:
        os.makedirs(ckpt_dir, exist_ok=True)
        save_checkpoint(state.dg_params, os.path.join(ckpt_dir, f"dg_stage{t}.ckpt"))
        if state.da_params is not None and variant not in ("da-only", "dg-only"):
            save_checkpoint(state.da_params, os.path.join(ckpt_dir, f"da_stage{t}.ckpt"))
    state.next_stage = t + 1
    return state


def save_run_state(state: RunState, seed_dir) -> None:
    """Resumable snapshot: counters, matrices, buffer, curve records."""
    ckpt_dir = os.path.join(seed_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    last = state.next_stage - 1
    dg_ckpt = f"checkpoints/dg_stage{last}.ckpt" if state.dg_params is not None else None
    da_ckpt = None
    if state.da_params is not None:
        da_ckpt = f"checkpoints/da_stage{last}.ckpt"
        save_checkpoint(state.da_params, os.path.join(seed_dir, da_ckpt))
    if state.dg_params is not None:
        save_checkpoint(state.dg_params, os.path.join(seed_dir, dg_ckpt))
    payload = {
        "version": STATE_VERSION,
        "seed": state.seed,
        "n_domains": state.n_domains,
        "next_stage": state.next_stage,
        "buffer": state.buffer.to_dict(),
        "dg_ckpt": dg_ckpt,
        "da_ckpt": da_ckpt,
        "da_matrix": state.da_matrix.to_state(),
        "dg_matrix": state.dg_matrix.to_state(),
        "curves": [list(rec) for rec in state.curves.records],
    }
    with open(os.path.join(seed_dir, "state.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    state.curves.save_csv(os.path.join(seed_dir, "curves.csv"))


def load_run_state(seed_dir) -> RunState:
    with open(os.path.join(seed_dir, "state.json"), encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != STATE_VERSION:
        raise ValueError(f"unsupported run-state version {payload.get('version')}")
    curves = CurveLog([tuple(rec) for rec in payload["curves"]])
    state = RunState(
        seed=payload["seed"],
        n_domains=payload["n_domains"],
        next_stage=payload["next_stage"],
        buffer=ReplayBuffer.from_dict(payload["buffer"]),
        da_matrix=AccuracyMatrix.from_state(payload["da_matrix"]),
        dg_matrix=AccuracyMatrix.from_state(payload["dg_matrix"]),
        curves=curves,
    )
    if payload["dg_ckpt"]:
        state.dg_params = load_checkpoint(os.path.join(seed_dir, payload["dg_ckpt"]))
    if payload["da_ckpt"]:
        state.da_params = load_checkpoint(os.path.join(seed_dir, payload["da_ckpt"]))
    return state


def run_seed(config: ExperimentConfig, seed: int, seed_dir=None,
             resume: bool = False) -> tuple[RunState, MetricsReport]:
    """All stages for one seed. ``config`` must already be normalized."""
    seq = config.sequence.build(split_seed=substream(seed, "data"))
    if config.domain_order:
        seq = seq.reordered(list(config.domain_order))
    state = None
    if resume and seed_dir is not None and os.path.exists(os.path.join(seed_dir, "state.json")):
        state = load_run_state(seed_dir)
    if state is None:
        state = new_run_state(seed, seq, config.buffer_capacity)
    ckpt_dir = os.path.join(seed_dir, "checkpoints") if seed_dir is not None else None
    for t in range(state.next_stage, seq.n_domains):
        run_stage(state, t, seq, config, ckpt_dir=ckpt_dir)
        if seed_dir is not None:
            save_run_state(state, seed_dir)
    metrics = MetricsReport.from_matrices(state.da_matrix, state.dg_matrix)
    return state, metrics


def _seed_worker(config_dict: dict, seed: int, seed_dir, resume: bool) -> dict:
    config = ExperimentConfig.from_dict(config_dict)
    state, metrics = run_seed(config, seed, seed_dir=seed_dir, resume=resume)
    return {
        "da_matrix": state.da_matrix.to_lists(),
        "dg_matrix": state.dg_matrix.to_lists(),
        "metrics": metrics.to_dict(),
    }


def _aggregate(per_seed: dict) -> dict:
    out = {}
    for key in ("tda_mean", "tdg_mean", "fa_mean", "all"):
        values = [entry["metrics"][key] for entry in per_seed.values()]
        if any(v is None for v in values):
            out[key.replace("_mean", "")] = None
            continue
        arr = np.asarray(values, dtype=np.float64)
        out[key.replace("_mean", "")] = {
            "mean": float(arr.mean()),
            "std": float(arr.std()),  # population std over the fixed seed set
        }
    return out


def run_experiment(config: ExperimentConfig, resume: bool = False, jobs: int = 1) -> dict:
    """Run every seed, write artifacts under ``config.out_dir`` when set.

    Returns the results document: per-seed accuracy matrices and metrics plus
    mean/std aggregates across seeds.
    """
    cfg = config.normalized()
    out_dir = cfg.out_dir
    per_seed: dict[str, dict] = {}
    seed_dirs = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for seed in cfg.seeds:
            seed_dirs[seed] = os.path.join(out_dir, f"seed{seed}")
            os.makedirs(seed_dirs[seed], exist_ok=True)

    if jobs > 1 and len(cfg.seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor

        cfg_dict = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                seed: pool.submit(_seed_worker, cfg_dict, seed, seed_dirs.get(seed), resume)
                for seed in cfg.seeds
            }
            for seed, fut in futures.items():
                per_seed[str(seed)] = fut.result()
    else:
        for seed in cfg.seeds:
            per_seed[str(seed)] = _seed_worker(cfg.to_dict(), seed, seed_dirs.get(seed), resume)

    results = {
        "config_digest": config_digest(cfg),
        "config": cfg.to_dict(),
        "variant": cfg.variant,
        "domain_order": list(cfg.domain_order) if cfg.domain_order else None,
        "per_seed": per_seed,
        "aggregate": _aggregate(per_seed),
    }
    if out_dir is not None:
        with open(os.path.join(out_dir, "results.json"), "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)
    return results
