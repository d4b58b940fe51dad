import numpy as np
import pytest

from latent.dense import (
    DenseNet,
    DenseNetConfig,
    OptimizerConfig,
    TrainingDiverged,
    evaluate,
    forward,
    gradient_check,
    load_checkpoint,
    loss_and_grads,
    predict,
    save_checkpoint,
    train,
    write_trace_csv,
)


def small_cfg(acts=("tanh",), hidden=(5,), **kw):
    kw.setdefault("dropout", (0.0,) * len(hidden))
    return DenseNetConfig(hidden=hidden, activations=acts, n_classes=3, epochs=1, batch_size=4, **kw)


@pytest.mark.parametrize("act", ["relu", "tanh", "sigmoid", "linear"])
def test_gradient_check(act):
    rng = np.random.default_rng(1)
    net = DenseNet.init(4, small_cfg((act, act), (5, 3)))
    x = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, 6)
    assert gradient_check(net, x, y) < 1e-6


def test_zero_net_is_uniform():
    net = DenseNet.zeros(7, small_cfg())
    probs = forward(net, np.random.default_rng(0).normal(size=(4, 7)))
    assert np.allclose(probs, 1 / 3)
    assert predict(net, np.ones(7)) == 0


def test_loss_matches_manual_cross_entropy():
    net = DenseNet.init(3, small_cfg())
    x = np.random.default_rng(3).normal(size=(5, 3))
    y = np.array([0, 1, 2, 1, 0])
    loss, _ = loss_and_grads(net, x, y)
    p = forward(net, x)
    assert loss == pytest.approx(-np.mean(np.log(p[np.arange(5), y])))


def test_xor_reaches_full_accuracy():
    x = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([0, 1, 1, 0])
    cfg = DenseNetConfig(hidden=(8,), activations=("tanh",), dropout=(0.0,), n_classes=2,
                         optimizer=OptimizerConfig("adam", 0.05), batch_size=4, epochs=500, seed=0)
    net, trace = train(DenseNet.init(2, cfg), x, y, cfg)
    assert evaluate(net, x, y) == 1.0
    assert trace[-1].loss < trace[0].loss


def test_sgd_momentum_decreases_loss():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 4))
    y = (x[:, 0] + x[:, 1] > 0).astype(int)
    cfg = DenseNetConfig(hidden=(8,), activations=("relu",), dropout=(0.2,), n_classes=2,
                         optimizer=OptimizerConfig("sgd", 0.1, momentum=0.9), batch_size=20, epochs=20)
    net, trace = train(DenseNet.init(4, cfg), x, y, cfg, x, y)
    assert trace[-1].loss < trace[0].loss
    assert trace[-1].test_acc > 0.9


def test_training_is_deterministic():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 4))
    y = rng.integers(0, 3, 50)
    cfg = small_cfg(("relu",), (6,), dropout=(0.5,))
    a, _ = train(DenseNet.init(4, cfg), x, y, cfg)
    b, _ = train(DenseNet.init(4, cfg), x, y, cfg)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_divergence_is_reported():
    x = np.random.default_rng(0).normal(size=(20, 3)) * 1e200
    y = np.zeros(20, dtype=int)
    cfg = DenseNetConfig(hidden=(4,), activations=("linear",), dropout=(0.0,), n_classes=2,
                         optimizer=OptimizerConfig("sgd", 1e10), batch_size=20, epochs=5)
    with np.errstate(all="ignore"), pytest.raises(TrainingDiverged):
        train(DenseNet.init(3, cfg), x, y, cfg)


def test_adadelta_falls_back_with_warning():
    with pytest.warns(UserWarning):
        assert OptimizerConfig("adadelta").name == "adam"
    with pytest.raises(ValueError):
        OptimizerConfig("rmsprop")


def test_config_validation():
    with pytest.raises(ValueError):
        DenseNetConfig(hidden=(4, 4), activations=("relu",), dropout=(0.1, 0.1))
    with pytest.raises(ValueError):
        DenseNetConfig(dropout=(1.0,))
    with pytest.raises(ValueError):
        DenseNetConfig(n_classes=1)


def test_train_input_validation():
    cfg = small_cfg()
    net = DenseNet.init(2, cfg)
    with pytest.raises(ValueError):
        train(net, np.zeros((3, 2)), np.array([0, 1, 5]), cfg)
    with pytest.raises(ValueError):
        train(net, np.zeros((0, 2)), np.zeros(0, dtype=int), cfg)


def test_checkpoint_round_trip(tmp_path):
    cfg = small_cfg(("relu", "sigmoid"), (4, 3))
    net = DenseNet.init(6, cfg)
    path = tmp_path / "m.ltfc"
    save_checkpoint(net, path)
    raw = path.read_bytes()
    assert raw[:4] == b"LTFC"
    again = load_checkpoint(path)
    assert again.activations == net.activations and again.dims == net.dims
    x = np.random.default_rng(0).normal(size=(3, 6))
    assert np.array_equal(forward(again, x), forward(net, x))
    path.write_bytes(raw + b"\0")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_trace_csv(tmp_path):
    cfg = small_cfg()
    x = np.random.default_rng(0).normal(size=(8, 2))
    _, trace = train(DenseNet.init(2, cfg), x, np.arange(8) % 3, replace_epochs(cfg, 3), x, np.arange(8) % 3)
    write_trace_csv(trace, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_acc,test_acc,loss"
    assert len(lines) == 4


def replace_epochs(cfg, n):
    from dataclasses import replace

    return replace(cfg, epochs=n)
