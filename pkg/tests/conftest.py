"""Shared fixtures: full-fidelity runs are expensive, so they are session-scoped."""

import numpy as np
import pytest

from codag import (
    AdaptConfig,
    AugmentConfig,
    DGConfig,
    ModelConfig,
    ReplayBuffer,
    accuracy,
    adapt_domain,
    default_sequence,
    generate_pseudo_labels,
    init_params,
    train_dg_source,
    train_dg_target,
    with_label_noise,
)
from codag.orchestrate import ExperimentConfig, run_seed
from codag.rng import RngStreams, substream

SEEDS5 = (2022, 2023, 2024, 2025, 2026)


def run_variant(variant: str, seed: int, log_curves: bool = False):
    cfg = ExperimentConfig(seeds=(seed,), variant=variant, log_curves=log_curves).normalized()
    return run_seed(cfg, seed)


def source_model(seed: int, seq=None):
    if seq is None:
        seq = default_sequence(split_seed=substream(seed, "data"))
    params = train_dg_source(
        init_params(ModelConfig(d=seq.d, k=seq.k), substream(seed, "init")),
        seq.train_sets[0], DGConfig(), AugmentConfig(), RngStreams.for_stage(seed, 0),
    )
    return seq, params


def selnlpl_noise_diff(seed: int, noise_rate: float = 0.20) -> float:
    """SelNLPL-on minus SelNLPL-off mean test accuracy after a full chain with
    noise injected into every stage's pseudo-labels (buffer removed, matching
    how the schedule's contribution is isolated)."""

    def chain(selnlpl: bool) -> float:
        seq = default_sequence(split_seed=substream(seed, "data"))
        aug = AugmentConfig()
        dgcfg = DGConfig(selnlpl=selnlpl)
        dg = train_dg_source(
            init_params(ModelConfig(d=seq.d, k=seq.k), substream(seed, "init")),
            seq.train_sets[0], dgcfg, aug, RngStreams.for_stage(seed, 0),
        )
        buf = ReplayBuffer(0, seq.k)
        for t in range(1, seq.n_domains):
            da = adapt_domain(dg, seq.train_sets[t], AdaptConfig(), substream(seed, "shuffle", t))
            pl = generate_pseudo_labels(da, seq.train_sets[t])
            pl = with_label_noise(pl, noise_rate, substream(seed, "nl", 90 + t))
            dg = train_dg_target(dg, pl, buf, dgcfg, aug, RngStreams.for_stage(seed, t))
        return float(np.mean([accuracy(dg, ts) for ts in seq.test_sets]))

    return chain(True) - chain(False)


@pytest.fixture(scope="session")
def variant_runs():
    """(RunState, MetricsReport) per (variant, seed) for the directional checks."""
    out = {}
    for variant in ("codag", "codag-da-init", "codag-no-buffer", "dg-only"):
        out[variant] = {seed: run_variant(variant, seed) for seed in SEEDS5}
    return out


@pytest.fixture(scope="session")
def codag_curve_state():
    """One default run with per-epoch curve logging enabled."""
    state, metrics = run_variant("codag", 2022, log_curves=True)
    return state, metrics


@pytest.fixture(scope="session")
def selnlpl_noise_diffs():
    return {seed: selnlpl_noise_diff(seed) for seed in SEEDS5}
