import math

import numpy as np
import pytest

from gtf.analytic import demo_world, log_density
from gtf.diffusion import UNCONDITIONAL, GuidanceConfig, SamplerConfig, build_schedule, sample
from gtf.errors import DataExhausted, InvalidDim, UnknownCondition
from gtf.mlp import (
    Batch,
    Mlp,
    MlpDenoiser,
    MlpSpec,
    TrainConfig,
    evaluate_loss,
    gradient_check,
    load_checkpoint,
    make_training_set,
    save_checkpoint,
    time_embedding,
    train,
)

CONDS = ["c1", "c2", "joint"]


def small_net(seed=0, zero_output=False, activation="silu"):
    spec = MlpSpec(hidden=(16, 12), time_embed_dim=8, condition_count=3, activation=activation)
    return Mlp.init(spec, CONDS, 1000, seed=seed, zero_output=zero_output)


def random_batch(n=32, seed=0):
    rng = np.random.default_rng(seed)
    return Batch(rng.standard_normal((n, 2)), rng.integers(1, 1001, n), rng.integers(0, 4, n),
                 rng.standard_normal((n, 2)))


def test_time_embedding_examples():
    np.testing.assert_array_equal(time_embedding(0, 8, 1000), [0, 1, 0, 1, 0, 1, 0, 1])
    e = time_embedding(37, 16, 1000)
    assert e[0] == pytest.approx(math.sin(37))
    assert e[1] == pytest.approx(math.cos(37))
    assert e[2] == pytest.approx(math.sin(37 * 10000 ** (-1 / 8)))
    for t in (0, 1, 500, 1000):
        assert np.sum(time_embedding(t, 32, 1000) ** 2) == pytest.approx(16.0, rel=1e-14)
    with pytest.raises(InvalidDim):
        time_embedding(3, 7, 1000)


def test_zero_output_layer_gives_zero():
    net = Mlp.init(MlpSpec(), CONDS, 1000, seed=3)
    x = np.random.default_rng(0).standard_normal((50, 2))
    for c in CONDS + [UNCONDITIONAL]:
        np.testing.assert_array_equal(net.forward(x, 500, c), 0.0)


def test_forward_deterministic_and_batched():
    net = small_net()
    x = np.random.default_rng(1).standard_normal((20, 2))
    a = net.forward(x, 300, "c2")
    assert a.tobytes() == net.forward(x, 300, "c2").tobytes()
    np.testing.assert_allclose(net.forward(x[3:4], 300, "c2"), a[3:4], rtol=1e-12)
    assert not np.allclose(a, net.forward(x, 300, UNCONDITIONAL))
    with pytest.raises(UnknownCondition):
        net.forward(x, 300, "c9")


@pytest.mark.parametrize("activation", ["silu", "relu"])
def test_gradient_check_correct(activation):
    net = small_net(activation=activation)
    assert gradient_check(net, random_batch(), n_params=64, h=1e-5) < 1e-4


def test_gradient_check_bias_only():
    assert gradient_check(small_net(), random_batch(), n_params=64, select="bias") < 1e-6


def test_gradient_check_catches_sign_flip():
    net = small_net()

    def corrupted(nt, b):
        grads = nt.loss_and_grads(b)[1]
        grads[2] = -grads[2]
        return grads

    assert gradient_check(net, random_batch(), grad_fn=corrupted) > 0.5


def test_single_weight_perturbation():
    net = small_net(seed=5)
    batch = random_batch(seed=5)
    _, grads = net.loss_and_grads(batch)
    delta = 1e-5
    base = net.loss(batch)
    net.params[0][1, 3] += delta
    changed = net.loss(batch)
    assert (changed - base) == pytest.approx(delta * grads[0][1, 3], rel=1e-4)


def test_initial_loss_is_dimension():
    world = demo_world()
    sched = build_schedule()
    net = Mlp.init(MlpSpec(), world.conditions, sched.T)
    data = make_training_set(net, world, sched, TrainConfig(n_per_condition=4000))
    assert evaluate_loss(net, data) == pytest.approx(2.0, abs=0.1)


def test_zero_learning_rate_constant_history():
    world = demo_world()
    sched = build_schedule()
    net = small_net()
    res = train(net, world, sched, TrainConfig(epochs=3, learning_rate=0.0, n_per_condition=600))
    assert len(res.losses) == 4
    assert len(set(res.losses)) == 1


def test_training_is_deterministic():
    world = demo_world()
    sched = build_schedule()
    cfg = TrainConfig(epochs=2, n_per_condition=600, seed=4)
    a = train(small_net(), world, sched, cfg)
    b = train(small_net(), world, sched, cfg)
    assert a.losses == b.losses
    for p, q in zip(a.net.params, b.net.params):
        assert p.tobytes() == q.tobytes()


def test_training_needs_enough_data():
    world = demo_world()
    with pytest.raises(DataExhausted):
        train(small_net(), world, build_schedule(), TrainConfig(epochs=1, n_per_condition=100))
    points = {c: np.zeros((10, 2)) for c in CONDS}
    with pytest.raises(DataExhausted):
        train(small_net(), points, build_schedule(), TrainConfig(epochs=1))


def test_checkpoint_round_trip(tmp_path):
    net = small_net(seed=9)
    path = tmp_path / "net.json"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.conditions == net.conditions and back.spec == net.spec and back.T == net.T
    for p, q in zip(net.params, back.params):
        assert p.tobytes() == q.tobytes()
    save_checkpoint(back, tmp_path / "again.json")
    assert path.read_bytes() == (tmp_path / "again.json").read_bytes()


def test_checkpoint_rejects_other_formats(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_training_halves_loss(trained_demo):
    _, _, result = trained_demo
    assert result.losses[0] == pytest.approx(2.0, abs=0.1)
    assert result.losses[-1] <= 0.5 * result.losses[0]


def test_unconditional_slot_is_distinct(trained_demo):
    world, sched, result = trained_demo
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1000, 2)) * 2
    t = rng.integers(1, sched.T + 1, 1000)
    net = result.net
    null = np.stack([net.forward(x[i:i + 1], int(t[i]), UNCONDITIONAL)[0] for i in range(1000)])
    for c in world.conditions:
        cond = np.stack([net.forward(x[i:i + 1], int(t[i]), c)[0] for i in range(1000)])
        assert np.mean(np.linalg.norm(cond - null, axis=1) > 1e-3) >= 0.95


def test_guidance_sanity(trained_demo):
    world, sched, result = trained_demo
    den = MlpDenoiser(result.net)
    g = GuidanceConfig(w1=1.0, w2=0.0, cfg_scale=1.0)
    for c in world.conditions:
        out = sample(den, sched, SamplerConfig(steps=50, seed=2), g, c, c, 2000)
        scores = np.stack([log_density(world[k], out) for k in world.conditions], axis=1)
        nearest = np.array(world.conditions)[np.argmax(scores, axis=1)]
        assert np.mean(nearest == c) >= 0.9, c
