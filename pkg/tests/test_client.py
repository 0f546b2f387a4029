import numpy as np
import pytest

from mfed.client import (ClientState, local_train, make_batches, penalty_grad,
                         penalty_value, regularized_loss)
from mfed.errors import DivergenceError
from mfed.model import (Architecture, LayoutEntry, ModelParams, TaskObjective,
                        init_params, with_values)
from mfed.seeding import stream
from mfed.taskgen import ClientShard, TaskSpec, generate_task_data, partition


class QuadObjective:
    """F(v) = 0.5 * (v - target)^2 on a one-parameter, encoder-only model."""

    def __init__(self, target=3.0):
        self.target = target

    def loss(self, params, x, y):
        return float(0.5 * (params.values[0] - self.target) ** 2)

    def loss_and_grad(self, params, x, y):
        v = params.values[0]
        return self.loss(params, x, y), np.array([v - self.target])


class ZeroObjective:
    """Identically zero loss; isolates the penalty dynamics."""

    def loss(self, params, x, y):
        return 0.0

    def loss_and_grad(self, params, x, y):
        return 0.0, np.zeros(params.total_len)


def scalar_params(v):
    return ModelParams(np.array([float(v)]), 1, (LayoutEntry("enc", 0, 1),))


def dummy_shard(n=1):
    return ClientShard(0, 1, np.zeros((n, 1)), np.zeros((n, 1)), np.arange(n))


def quad_client(v0=0.0, objective=None):
    return ClientState(client_id=0, task_id=1, shard=dummy_shard(),
                       params=scalar_params(v0),
                       objective=objective or QuadObjective(),
                       batch_size=1, seed=0)


def test_penalty_zero_when_encoder_matches_target():
    enc = np.array([1.0, 2.0])
    for form in ("squared", "norm"):
        assert penalty_value(enc, enc.copy(), 5.0, form) == 0.0


def test_penalty_squared_hand_example():
    # ||[3,0]-[0,4]||^2 = 25, so penalty = 2 * 25 / 2 = 25
    assert penalty_value(np.array([3.0, 0.0]), np.array([0.0, 4.0]), 2.0,
                         "squared") == pytest.approx(25.0, abs=1e-12)


def test_penalty_norm_hand_example():
    # ||d|| = 5, penalty = 2 * 5 = 10
    assert penalty_value(np.array([3.0, 0.0]), np.array([0.0, 4.0]), 2.0,
                         "norm") == pytest.approx(10.0, abs=1e-12)


def test_penalty_grad_forms():
    enc = np.array([3.0, 0.0])
    g = np.array([0.0, 4.0])
    assert np.allclose(penalty_grad(enc, g, 2.0, "squared"), [6.0, -8.0])
    assert np.allclose(penalty_grad(enc, g, 2.0, "norm"), [6.0 / 5, -8.0 / 5])
    # subgradient 0 at w* = g for the plain-norm form
    assert np.array_equal(penalty_grad(g, g, 2.0, "norm"), [0.0, 0.0])


def test_penalty_length_mismatch_rejected():
    with pytest.raises(ValueError, match="length"):
        penalty_value(np.zeros(3), np.zeros(2), 1.0, "squared")


def test_regularized_loss_reduces_to_plain_loss():
    obj = QuadObjective()
    params = scalar_params(1.0)
    g = params.encoder.copy()
    assert regularized_loss(obj, params, None, None, g, 7.0) == obj.loss(params, None, None)


def test_quadratic_one_step_plain():
    # v0=0, alpha=0.1, grad=(0-3): one step lands on 0.3
    state = quad_client(0.0)
    report = local_train(state, scalar_params(0.0), np.array([0.0]), 0.0,
                         alpha=0.1, epochs=1, round_index=0)
    assert state.params.values[0] + report.delta[0] == pytest.approx(0.3, abs=1e-15)


def test_quadratic_one_step_with_penalty():
    # grad = (0-3) + 1*(0-1) = -4: one step lands on 0.4
    state = quad_client(0.0)
    report = local_train(state, scalar_params(0.0), np.array([1.0]), 1.0,
                         alpha=0.1, epochs=1, round_index=0)
    assert report.delta[0] == pytest.approx(0.4, abs=1e-15)


def test_lambda_zero_is_plain_sgd_bitwise():
    task = TaskSpec(1, "categorical", "accuracy", classes=4,
                    latent_seed=3, head_seed=4)
    arch = Architecture(8, (16, 8))
    x, y = generate_task_data(task, 24, 5)
    shard = partition(x, y, 1, 1)[0]
    obj = TaskObjective(arch, task)
    base = init_params(arch, task, 9)
    state = ClientState(0, 1, shard, base, obj, batch_size=8, seed=42)
    report = local_train(state, base, base.encoder.copy(), 0.0,
                         alpha=0.05, epochs=3, round_index=2)

    # plain SGD, same derived rng stream
    vec = base.values.copy()
    rng = stream(42, "client", 0, "round", 2)
    for _ in range(3):
        perm = rng.permutation(shard.size)
        for start in range(0, shard.size, 8):
            idx = perm[start: start + 8]
            _, grad = obj.loss_and_grad(with_values(base, vec),
                                        shard.x[idx], shard.y[idx])
            vec = vec - 0.05 * grad
    assert np.array_equal(report.delta, vec - base.values)


def test_decoder_gradient_unaffected_by_penalty():
    # one full-batch step: decoder part of the delta is identical for any
    # lambda because the penalty touches only encoder coordinates
    task = TaskSpec(1, "regression", "mse", latent_seed=1, head_seed=2)
    arch = Architecture(8, (8, 4))
    x, y = generate_task_data(task, 16, 0)
    shard = partition(x, y, 1, 1)[0]
    obj = TaskObjective(arch, task)
    base = init_params(arch, task, 0)
    g = np.zeros(base.encoder_len)
    deltas = {}
    for lam in (0.0, 5.0):
        state = ClientState(0, 1, shard, base, obj, batch_size=100, seed=0)
        deltas[lam] = local_train(state, base, g, lam, 0.1, 1, 0).delta
    enc = base.encoder_len
    assert np.array_equal(deltas[0.0][enc:], deltas[5.0][enc:])
    assert not np.array_equal(deltas[0.0][:enc], deltas[5.0][:enc])


def test_drift_contracts_by_one_minus_alpha_lambda():
    # with zero task loss the squared-form update is w <- w - a*l*(w - g):
    # distance shrinks by exactly |1 - a*l| per step, monotonically for al<1
    enc0 = np.array([2.0, -1.0, 0.5])
    base = ModelParams(enc0, 3, (LayoutEntry("enc", 0, 3),))
    g = np.zeros(3)
    alpha, lam, steps = 0.2, 2.0, 5
    shard = ClientShard(0, 1, np.zeros((1, 1)), np.zeros((1, 1)), np.arange(1))
    state = ClientState(0, 1, shard, base, ZeroObjective(), batch_size=1, seed=0)
    report = local_train(state, base, g, lam, alpha, epochs=steps, round_index=0)
    expected = abs(1 - alpha * lam) ** steps * np.linalg.norm(enc0)
    assert report.drift_after == pytest.approx(expected, rel=1e-12)
    assert report.drift_after < report.drift_before


def test_regularized_objective_nonincreasing_small_alpha():
    # strongly convex loss, fixed g: h must not increase at alpha = 1e-3
    obj = QuadObjective(target=3.0)
    g = np.array([1.0])
    lam, alpha = 1.0, 1e-3
    vec = np.array([-2.0])
    prev = obj.loss(scalar_params(vec[0]), None, None) + \
        penalty_value(vec, g, lam, "squared")
    for _ in range(200):
        _, grad = obj.loss_and_grad(scalar_params(vec[0]), None, None)
        grad = grad + penalty_grad(vec, g, lam, "squared")
        vec = vec - alpha * grad
        h = obj.loss(scalar_params(vec[0]), None, None) + \
            penalty_value(vec, g, lam, "squared")
        assert h <= prev + 1e-15
        prev = h


def test_delta_reproduces_final_params_exactly():
    task = TaskSpec(1, "regression", "mse", latent_seed=8, head_seed=9)
    arch = Architecture(8, (8, 4))
    x, y = generate_task_data(task, 16, 0)
    shard = partition(x, y, 1, 1)[0]
    obj = TaskObjective(arch, task)
    base = init_params(arch, task, 1)
    state = ClientState(0, 1, shard, base, obj, batch_size=4, seed=3)
    report = local_train(state, base, base.encoder.copy(), 0.3, 0.05, 2, 1)
    rebuilt = base.values + report.delta
    # the report's loss and drift were computed from exactly this vector
    assert report.final_loss == regularized_loss(
        obj, with_values(base, rebuilt), shard.x, shard.y,
        base.encoder.copy(), 0.3)
    assert report.drift_after == float(
        np.linalg.norm(rebuilt[:base.encoder_len] - base.encoder))


def test_make_batches_single_batch_when_large():
    shard = partition(*generate_task_data(
        TaskSpec(1, "regression", "mse", latent_seed=0, head_seed=0), 6, 0), 1, 1)[0]
    batches = make_batches(shard, 100, stream(0, "b"))
    assert len(batches) == 1
    assert batches[0][0].shape[0] == 6


def test_make_batches_reproducible_and_covering():
    shard = partition(*generate_task_data(
        TaskSpec(1, "regression", "mse", latent_seed=0, head_seed=0), 10, 0), 1, 1)[0]
    a = make_batches(shard, 3, stream(5, "x"))
    b = make_batches(shard, 3, stream(5, "x"))
    for (xa, _), (xb, _) in zip(a, b):
        assert np.array_equal(xa, xb)
    seen = np.concatenate([x for x, _ in a])
    assert seen.shape[0] == 10
    assert np.array_equal(np.sort(seen[:, 0]), np.sort(shard.x[:, 0]))


def test_make_batches_empty_shard_rejected():
    empty = ClientShard(0, 1, np.zeros((0, 2)), np.zeros(0), np.arange(0))
    with pytest.raises(ValueError, match="empty"):
        make_batches(empty, 4, stream(0, "b"))


def test_make_batches_bad_batch_size_rejected():
    with pytest.raises(ValueError, match="batch_size"):
        make_batches(dummy_shard(3), 0, stream(0, "b"))


def test_divergence_detected_with_step_index():
    state = quad_client(0.0)
    with np.errstate(over="ignore"), pytest.raises(DivergenceError) as err:
        local_train(state, scalar_params(0.0), np.array([0.0]), 0.0,
                    alpha=1e12, epochs=400, round_index=0)
    assert err.value.step_index > 0
    assert str(err.value.step_index) in str(err.value)


def test_local_train_validates_args():
    state = quad_client()
    with pytest.raises(ValueError, match="epochs"):
        local_train(state, scalar_params(0.0), np.zeros(1), 0.0, 0.1, 0, 0)
    with pytest.raises(ValueError, match="alpha"):
        local_train(state, scalar_params(0.0), np.zeros(1), 0.0, -1.0, 1, 0)
    with pytest.raises(ValueError, match="length"):
        local_train(state, scalar_params(0.0), np.zeros(2), 0.0, 0.1, 1, 0)
