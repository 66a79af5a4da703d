import numpy as np
import pytest

from codag.adapt import _im_pl_logit_loss
from codag.generalize import _CE, _NL, _SKIP, _mixed_logit_loss
from codag.nnmodel import (
    CheckpointError,
    ClassifierParams,
    ModelConfig,
    Sgd,
    features,
    forward,
    gradient,
    init_params,
    load_checkpoint,
    save_checkpoint,
    softmax,
)


def small_params(seed=1, d=4, k=3, hidden=(6,), feat_dim=5, float64=False):
    params = init_params(ModelConfig(d=d, k=k, hidden=hidden, feat_dim=feat_dim), seed)
    if float64:
        for name in params.blocks:
            params.blocks[name] = params.blocks[name].astype(np.float64)
    return params


def test_init_determinism_and_bounds():
    a = init_params(ModelConfig(d=3, k=2), 42)
    b = init_params(ModelConfig(d=3, k=2), 42)
    assert a.blocks.keys() == b.blocks.keys()
    for name in a.blocks:
        np.testing.assert_array_equal(a.blocks[name], b.blocks[name])
    for name, block in a.blocks.items():
        if name.endswith(".b"):
            assert np.all(block == 0.0)
        else:
            fan_in, fan_out = block.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            assert np.all(np.abs(block) <= bound)


def test_forward_zero_params_gives_zero_logits():
    params = small_params()
    for name in params.blocks:
        params.blocks[name] = np.zeros_like(params.blocks[name])
    out = forward(params, np.ones(4))
    np.testing.assert_array_equal(out, np.zeros(3))


def test_forward_hand_computed_single_layer():
    # extractor d=2 -> feat 2 (identity), head 2x2 hand-set: logits = W_h^T x + b
    blocks = {
        "ext0.w": np.eye(2, dtype=np.float32),
        "ext0.b": np.zeros(2, dtype=np.float32),
        "head.w": np.array([[1.0, -2.0], [3.0, 0.5]], dtype=np.float32),
        "head.b": np.array([0.25, -1.0], dtype=np.float32),
    }
    params = ClassifierParams(blocks)
    x = np.array([2.0, -1.0])
    expected = x @ blocks["head.w"].astype(float) + blocks["head.b"].astype(float)
    np.testing.assert_allclose(forward(params, x), expected, atol=1e-12)


def test_batch_forward_matches_stacked_single():
    params = small_params(seed=7)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 4))
    batch = forward(params, x)
    singles = np.stack([forward(params, row) for row in x])
    np.testing.assert_allclose(batch, singles, atol=0)


def test_forward_dimension_mismatch():
    params = small_params()
    with pytest.raises(ValueError, match="dimension"):
        forward(params, np.ones(5))


def test_features_compose_with_head():
    params = small_params(seed=3)
    x = np.random.default_rng(1).standard_normal((6, 4))
    feats = features(params, x)
    assert feats.shape == (6, 5)
    manual = feats @ params.blocks["head.w"].astype(float) + params.blocks["head.b"].astype(float)
    np.testing.assert_allclose(forward(params, x), manual, atol=1e-12)


def test_features_zero_extractor():
    params = small_params()
    for name in params.blocks:
        if name.startswith("ext"):
            params.blocks[name] = np.zeros_like(params.blocks[name])
    np.testing.assert_array_equal(features(params, np.ones(4)), np.zeros(5))


def test_softmax_basics():
    np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5], atol=1e-15)
    z = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(softmax(z), softmax(z + 17.5), atol=1e-15)
    big = softmax([1000.0, 0.0])
    assert big[0] > 1 - 1e-12 and np.isfinite(big).all()
    rows = softmax(np.random.default_rng(0).standard_normal((20, 4)))
    np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-9)
    with pytest.raises(ValueError):
        softmax([np.nan, 0.0])
    with pytest.raises(ValueError):
        softmax([np.inf, 0.0])


def fd_gradient(loss_fn, params, x, h=1e-5):
    grads = {}
    for name, block in params.blocks.items():
        g = np.zeros_like(block)
        it = np.nditer(block, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = block[idx]
            block[idx] = orig + h
            lp, _ = loss_fn(np.atleast_2d(forward(params, x)))
            block[idx] = orig - h
            lm, _ = loss_fn(np.atleast_2d(forward(params, x)))
            block[idx] = orig
            g[idx] = (lp - lm) / (2 * h)
        grads[name] = g
    return grads


def assert_fd_match(loss_fn, params, x, tol=1e-4):
    _, grads = gradient(loss_fn, params, x)
    fd = fd_gradient(loss_fn, params, x)
    for name in params.blocks:
        denom = np.maximum(np.maximum(np.abs(fd[name]), np.abs(grads[name])), 1e-8)
        rel = np.abs(fd[name] - grads[name]) / denom
        assert rel.max() < tol, f"{name}: rel err {rel.max():.2e}"


@pytest.fixture
def fd_setup():
    params = small_params(seed=5, float64=True)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((7, 4))
    y = rng.integers(0, 3, 7)
    return params, x, y, rng


def test_gradient_matches_fd_cross_entropy(fd_setup):
    params, x, y, _ = fd_setup
    kinds = np.full(7, _CE)
    assert_fd_match(_mixed_logit_loss(y, kinds, None, None, 0.0, 1e-7), params, x)


def test_gradient_matches_fd_negative_learning(fd_setup):
    params, x, y, _ = fd_setup
    kinds = np.full(7, _NL)
    comp = (y + 1) % 3
    assert_fd_match(_mixed_logit_loss(y, kinds, comp, None, 0.0, 1e-7), params, x)


def test_gradient_matches_fd_distillation(fd_setup):
    params, x, y, rng = fd_setup
    q = softmax(rng.standard_normal((7, 3)))
    kinds = np.full(7, _SKIP)
    assert_fd_match(_mixed_logit_loss(y, kinds, None, q, 1.0, 1e-7), params, x)


def test_gradient_matches_fd_mixed_batch(fd_setup):
    params, x, y, rng = fd_setup
    q = softmax(rng.standard_normal((7, 3)))
    kinds = np.array([_CE, _NL, _SKIP, _CE, _NL, _CE, _SKIP])
    comp = (y + 1) % 3
    assert_fd_match(_mixed_logit_loss(y, kinds, comp, q, 0.7, 1e-7), params, x)


def test_gradient_matches_fd_im_plus_pseudo_ce(fd_setup):
    params, x, y, _ = fd_setup
    assert_fd_match(_im_pl_logit_loss(y, 1.0, 0.3), params, x)


def test_freeze_head_zeroes_head_blocks(fd_setup):
    params, x, y, _ = fd_setup
    _, grads = gradient(_im_pl_logit_loss(y, 1.0, 0.3), params, x, freeze_head=True)
    assert np.all(grads["head.w"] == 0.0)
    assert np.all(grads["head.b"] == 0.0)
    assert np.any(grads["ext0.w"] != 0.0)


def test_constant_loss_gives_zero_gradients(fd_setup):
    params, x, _, _ = fd_setup

    def const(logits):
        return 3.5, np.zeros_like(logits)

    _, grads = gradient(const, params, x)
    for name, g in grads.items():
        assert np.all(g == 0.0), name


def test_non_finite_loss_raises(fd_setup):
    params, x, _, _ = fd_setup

    def bad(logits):
        return np.nan, np.zeros_like(logits)

    with pytest.raises(FloatingPointError):
        gradient(bad, params, x)


def test_sgd_leaves_frozen_blocks_bit_identical():
    params = small_params(seed=9)
    before = {name: block.copy() for name, block in params.blocks.items()}
    opt = Sgd(params, lr=0.1, frozen=("head.w", "head.b"))
    grads = {name: np.ones_like(block, dtype=np.float64) for name, block in params.blocks.items()}
    for _ in range(3):
        opt.step(params, grads)
    assert params.blocks["head.w"].tobytes() == before["head.w"].tobytes()
    assert params.blocks["head.b"].tobytes() == before["head.b"].tobytes()
    assert not np.array_equal(params.blocks["ext0.w"], before["ext0.w"])


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    params = small_params(seed=11)
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert loaded.blocks.keys() == params.blocks.keys()
    for name in params.blocks:
        assert loaded.blocks[name].dtype == np.float32
        assert loaded.blocks[name].tobytes() == params.blocks[name].tobytes()


def test_checkpoint_corruption_detected(tmp_path):
    params = small_params(seed=11)
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    blob = path.read_bytes()

    truncated = tmp_path / "trunc.ckpt"
    truncated.write_bytes(blob[:-10])
    with pytest.raises(CheckpointError, match="truncated|payload"):
        load_checkpoint(truncated)

    bad_magic = tmp_path / "magic.ckpt"
    bad_magic.write_bytes(b"NOTACKPT!" + blob[9:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad_magic)

    bad_version = tmp_path / "ver.ckpt"
    bad_version.write_bytes(blob[:9] + bytes([9]) + blob[10:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(bad_version)

    trailing = tmp_path / "trail.ckpt"
    trailing.write_bytes(blob + b"\x00\x00\x00\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(trailing)
