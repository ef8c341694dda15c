import csv

import numpy as np
import pytest

from capsroute import autodiff as ad
from capsroute import training
from capsroute.autodiff import Tensor
from capsroute.config import RunConfig
from capsroute.data import Dataset, load_mnist
from capsroute.layers import CapsNet, load_checkpoint
from capsroute.training import (
    Adam,
    DivergenceError,
    MarginLossParams,
    apply_dropout,
    error_rate,
    eval_checkpoint_averaged,
    evaluate,
    margin_loss,
    predict_labels,
    train,
    weight_decay_penalty,
)


def tiny_config(**kw):
    base = dict(conv1_channels=4, prim_channels=2, batch_size=8, max_steps=6, log_every=2,
                checkpoint_every=3, augment_shift=2)
    base.update(kw)
    return RunConfig.from_preset("desk_mnist", **base)


@pytest.fixture
def toy_data():
    r = np.random.default_rng(0)
    return Dataset(r.uniform(size=(40, 1, 28, 28)), np.arange(40) % 10, "train", 10, "toy")


# margin loss ---------------------------------------------------------------------

def hand_margin(a, positives, m_plus=0.9, m_minus=0.1, lam=0.5):
    total = 0.0
    for k, ak in enumerate(a):
        if k in positives:
            total += max(0.0, m_plus - ak) ** 2
        else:
            total += lam * max(0.0, ak - m_minus) ** 2
    return total


def test_margin_loss_perfect_output_is_zero():
    a = np.full(10, 0.05)
    a[4] = 0.95
    assert margin_loss(a, [4]).item() == 0.0


def test_margin_loss_missing_positive_costs_m_plus_squared():
    a = np.zeros(10)
    assert margin_loss(a, [2]).item() == pytest.approx(0.81, abs=1e-15)


def test_margin_loss_matches_scalar_evaluation(rng):
    for _ in range(50):
        a = rng.uniform(0, 1, size=10)
        positives = set(rng.choice(10, size=rng.integers(1, 3), replace=False).tolist())
        assert margin_loss(a, positives).item() == pytest.approx(hand_margin(a, positives), rel=1e-13)


def test_margin_loss_batch_is_mean(rng):
    a = rng.uniform(size=(4, 10))
    labels = [[1], [3, 7], [0], [9]]
    targets = np.zeros((4, 10))
    for n, pos in enumerate(labels):
        targets[n, pos] = 1.0
    expected = np.mean([hand_margin(a[n], set(p)) for n, p in enumerate(labels)])
    assert margin_loss(a, targets).item() == pytest.approx(expected, rel=1e-13)


def test_margin_loss_rejects_empty_label_set():
    with pytest.raises(ValueError):
        margin_loss(np.zeros(10), [])
    with pytest.raises(ValueError):
        margin_loss(np.zeros((2, 10)), np.zeros((2, 10)))


def test_margin_params_validated():
    with pytest.raises(ValueError):
        MarginLossParams(m_plus=0.1, m_minus=0.9)


def test_margin_loss_nonnegative(rng):
    for _ in range(20):
        assert margin_loss(rng.uniform(size=10), [int(rng.integers(10))]).item() >= 0.0


# regularisers ---------------------------------------------------------------------

def test_weight_decay_zero_is_no_op(rng):
    params = [Tensor(rng.normal(size=(3, 3)), requires_grad=True)]
    assert weight_decay_penalty(params, 0.0) == 0.0


def test_weight_decay_value_and_gradient(rng):
    params = [Tensor(rng.normal(size=(3, 3)), requires_grad=True), Tensor(rng.normal(size=4), requires_grad=True)]
    pen = weight_decay_penalty(params, 3e-5)
    assert pen.item() == pytest.approx(3e-5 * sum(float(np.sum(p.data**2)) for p in params), rel=1e-13)
    ad.backward(pen)
    for p in params:
        np.testing.assert_allclose(p.grad, 2 * 3e-5 * p.data, rtol=1e-13)


def test_dropout_keep_one_is_identity(rng):
    caps = Tensor(rng.normal(size=(2, 5, 8)))
    assert apply_dropout(caps, 1.0, rng) is caps


def test_dropout_drops_whole_capsules(rng):
    caps = Tensor(rng.normal(size=(3, 50, 8)) + 5.0)
    out = apply_dropout(caps, 0.5, rng).data
    zero = np.all(out == 0.0, axis=-1)
    partial = np.any(out == 0.0, axis=-1) & ~zero
    assert not partial.any()
    np.testing.assert_allclose(out[~zero], caps.data[~zero] / 0.5)


@pytest.mark.parametrize("keep", [0.5, 0.8, 0.9])
def test_dropout_fraction_monte_carlo(keep):
    r = np.random.default_rng(42)
    caps = Tensor(np.ones((10_000, 1, 4)))
    out = apply_dropout(caps, keep, r).data
    dropped = np.mean(np.all(out == 0.0, axis=-1))
    assert abs(dropped - (1 - keep)) < 0.01


def test_element_dropout_mode(rng):
    caps = Tensor(np.ones((200, 10, 8)))
    out = apply_dropout(caps, 0.5, rng, mode="element").data
    assert np.any(np.any(out == 0, axis=-1) & ~np.all(out == 0, axis=-1))
    with pytest.raises(ValueError):
        apply_dropout(caps, 0.5, rng, mode="block")


def test_dropout_is_off_at_eval(toy_data):
    model = CapsNet(tiny_config())
    with_dropout = CapsNet(tiny_config(dropout_keep=0.5))
    with_dropout.load_state_dict(model.state_dict())
    a = with_dropout.predict_scores(toy_data.images)
    b = model.predict_scores(toy_data.images)
    assert a.tobytes() == b.tobytes()
    assert evaluate(model, toy_data) == evaluate(with_dropout, toy_data)


# optimiser ------------------------------------------------------------------------

def test_adam_first_step_matches_hand_formula():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.array([0.5, -0.25])
    opt = Adam([p], lr=0.1)
    opt.step()
    # bias-corrected first step moves every coordinate by lr * sign(g)
    np.testing.assert_allclose(p.data, [1.0 - 0.1, -2.0 + 0.1], rtol=1e-7)


def test_adam_learning_rate_decay():
    opt = Adam([], lr=1e-3, decay_rate=0.96, decay_steps=2000)
    opt.t = 4000
    assert opt.current_lr() == pytest.approx(1e-3 * 0.96**2)


# training loop --------------------------------------------------------------------

def test_zero_learning_rate_leaves_weights_unchanged(toy_data):
    config = tiny_config(learning_rate=0.0)
    before = CapsNet(config).state_dict()
    result = train(config, toy_data)
    for name, arr in result.model.state_dict().items():
        assert arr.tobytes() == before[name].tobytes()


def test_same_seed_same_loss_curve(toy_data):
    a = train(tiny_config(), toy_data)
    b = train(tiny_config(), toy_data)
    assert a.losses == b.losses
    c = train(tiny_config(seed=1), toy_data)
    assert c.losses != a.losses


def test_checkpoints_and_log(tmp_path, toy_data):
    config = tiny_config(max_steps=7, checkpoint_every=3, log_every=2)
    result = train(config, toy_data, tmp_path, test_set=toy_data)
    names = sorted(p.name for p in tmp_path.glob("ckpt-*.bin"))
    assert names == ["ckpt-0000003.bin", "ckpt-0000006.bin", "ckpt-0000007.bin"]
    with open(tmp_path / "train_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["step", "loss", "train_acc", "eval_acc"]
    assert [int(r["step"]) for r in rows] == [2, 4, 6, 7]
    assert rows[-1]["eval_acc"] != ""
    final, header = load_checkpoint(tmp_path / "ckpt-0000007.bin")
    assert header["step"] == 7
    for name, arr in final.state_dict().items():
        assert arr.tobytes() == result.model.params[name].data.tobytes()


def test_divergence_keeps_last_checkpoint(tmp_path, toy_data, monkeypatch):
    real = training.margin_loss
    calls = {"n": 0}

    def flaky(scores, targets, params):
        calls["n"] += 1
        loss = real(scores, targets, params)
        return loss * float("nan") if calls["n"] == 5 else loss

    monkeypatch.setattr(training, "margin_loss", flaky)
    with pytest.raises(DivergenceError) as info:
        train(tiny_config(checkpoint_every=2, max_steps=10), toy_data, tmp_path)
    assert info.value.step == 5
    assert info.value.last_checkpoint == tmp_path / "ckpt-0000004.bin"
    assert info.value.last_checkpoint.exists()


def test_loss_decreases_on_real_digits(desk_mnist_dir):
    data = load_mnist(desk_mnist_dir, "train").stratified_subset(1000)
    config = RunConfig.from_preset("desk_mnist", max_steps=500, log_every=100)
    losses = train(config, data).losses
    assert np.mean(losses[-100:]) < np.mean(losses[:100])


# evaluation -----------------------------------------------------------------------

def constant_predictor(config, k):
    """A network whose class ``k`` always wins."""
    model = CapsNet(config)
    for name in CapsNet.PARAM_NAMES:
        model.params[name].data[...] = 0.0
    model.params["conv2_b"].data[:] = 0.5
    model.params["digit_w"].data[:, k] = 0.3
    return model


def test_error_rate_of_constant_predictor(toy_data):
    labels = np.array([0] * 9 + [1])
    data = Dataset(toy_data.images[:10], labels, "test", 10, "toy")
    model = constant_predictor(tiny_config(), 0)
    assert evaluate(model, data) == pytest.approx(0.1)
    assert eval_checkpoint_averaged([model], data) == pytest.approx(0.1)
    assert eval_checkpoint_averaged([model] * 4, data) == pytest.approx(0.1)
    assert eval_checkpoint_averaged([model] * 4, data, mode="weights") == pytest.approx(0.1)


def test_metric_average_of_two_checkpoints(toy_data, monkeypatch):
    a, b = CapsNet(tiny_config()), CapsNet(tiny_config(seed=1))
    rates = {id(a): 0.1, id(b): 0.3}
    monkeypatch.setattr(training, "evaluate", lambda m, data, batch_size=256: rates[id(m)])
    assert eval_checkpoint_averaged([a, b], toy_data) == pytest.approx(0.2)


def test_weight_average_mode(toy_data):
    a, b = CapsNet(tiny_config()), CapsNet(tiny_config(seed=1))
    merged = CapsNet(tiny_config())
    merged.load_state_dict({k: (a.params[k].data + b.params[k].data) / 2 for k in CapsNet.PARAM_NAMES})
    assert eval_checkpoint_averaged([a, b], toy_data, mode="weights") == evaluate(merged, toy_data)
    with pytest.raises(ValueError):
        eval_checkpoint_averaged([a], toy_data, mode="median")


def test_eval_rejects_empty_inputs(toy_data):
    with pytest.raises(ValueError):
        eval_checkpoint_averaged([], toy_data)
    # an empty Dataset cannot even be built
    with pytest.raises(ValueError, match="empty"):
        eval_checkpoint_averaged([CapsNet(tiny_config())], toy_data.take(np.arange(0)))


def test_checkpoint_eval_round_trip(tmp_path, toy_data):
    result = train(tiny_config(), toy_data, tmp_path)
    reloaded, _ = load_checkpoint(result.checkpoints[-1])
    assert evaluate(reloaded, toy_data) == evaluate(result.model, toy_data)
    assert (reloaded.predict_scores(toy_data.images).tobytes()
            == result.model.predict_scores(toy_data.images).tobytes())


def test_multilabel_error_rate():
    scores = np.array([[0.9, 0.1, 0.8, 0.0], [0.9, 0.8, 0.1, 0.0]])
    data = Dataset(np.zeros((2, 1, 28, 28)), np.array([[2, 0], [0, 2]]), "test", 4, "toy")
    np.testing.assert_array_equal(predict_labels(scores, 2), [[0, 2], [0, 1]])
    assert error_rate(scores, data) == 0.5
