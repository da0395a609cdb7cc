import numpy as np
import pytest
import torch

from avatarfit.engine import Engine
from avatarfit.errors import ConfigError, NotTrainedError
from avatarfit.imitator import (
    Imitator,
    ImitatorArch,
    ImitatorTrainConfig,
    held_out_l1,
    localization_ratio,
    pretrain_generator,
    sweep_statistics,
    train_imitator,
)
from avatarfit.losses import ImitatorLossWeights, LossKit
from avatarfit.nets import FeatureExtractor, IdentityEmbedder
from avatarfit.schema import flatten_batch, interpolate, relax

ARCH = ImitatorArch(size=16, n_styles=2, style_dim=8, width=0.25, mlp_hidden=16)
CFG = ImitatorTrainConfig(epochs=2, pretrain_epochs=1, batch_size=8)


@pytest.fixture(scope="module")
def data(schema, catalog):
    engine = Engine(schema, catalog, size=16)
    vecs = [schema.random_strict(i) for i in range(24)]
    renders = np.stack([engine.render(v).image for v in vecs])
    torch.manual_seed(0)
    kit = LossKit(FeatureExtractor(0), IdentityEmbedder(dim=16, width=8))
    return engine, vecs, renders, flatten_batch(vecs), kit


@pytest.fixture(scope="module")
def trained(data, schema):
    engine, vecs, renders, flat, kit = data
    pre = pretrain_generator(renders, ARCH, CFG, kit)
    res = train_imitator(flat, renders, kit, ARCH, CFG, pre)
    return Imitator(schema, res.model, ARCH), res, pre


def test_default_schedule():
    c = ImitatorTrainConfig()
    assert (c.lr, c.decay, c.decay_every, c.epochs, c.two_step) == (0.01, 0.5, 2, 20, True)
    assert ImitatorLossWeights() == ImitatorLossWeights(1.0, 0.8, 1.0)
    with pytest.raises(ConfigError):
        ImitatorTrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        ImitatorTrainConfig(epochs=0)


def test_two_step_needs_a_pretrained_generator(data):
    _, _, renders, flat, kit = data
    with pytest.raises(ConfigError):
        train_imitator(flat, renders, kit, ARCH, CFG, None)


def test_pretrain_rejects_wrong_size(data):
    _, _, renders, _, kit = data
    with pytest.raises(ConfigError):
        pretrain_generator(renders, ImitatorArch(size=32), CFG, kit)


def test_outputs_are_bounded_images(trained, schema):
    imitator = trained[0]
    img = imitator.imitate(schema.random_strict(99))
    assert img.shape == (16, 16, 3) and img.min() >= 0 and img.max() <= 1


def test_imitate_is_deterministic_and_accepts_relaxed(trained, schema):
    imitator = trained[0]
    v = schema.random_strict(5)
    assert np.array_equal(imitator.imitate(v), imitator.imitate(v))
    assert np.array_equal(imitator.imitate(v), imitator.imitate(relax(v)))
    assert np.array_equal(imitator.imitate(interpolate(v, schema.random_strict(6), 0.0)), imitator.imitate(v))


def test_batched_matches_single(trained, schema):
    imitator = trained[0]
    vecs = [schema.random_strict(i) for i in range(5)]
    many = imitator.imitate_many(vecs)
    for v, img in zip(vecs, many):
        np.testing.assert_allclose(img, imitator.imitate(v), atol=1e-6)


def test_sweep_endpoints_match_direct_calls(trained, schema):
    imitator = trained[0]
    v1, v2 = schema.random_strict(1), schema.random_strict(2)
    frames = imitator.interpolation_sweep(v1, v2, 9)
    assert len(frames) == 9
    assert np.array_equal(frames[0], imitator.imitate(v1))
    assert np.array_equal(frames[-1], imitator.imitate(v2))
    with pytest.raises(ValueError):
        imitator.interpolation_sweep(v1, v2, 1)


def test_sweep_statistics_on_a_linear_ramp():
    frames = [np.full((4, 4, 3), i / 10) for i in range(11)]
    s = sweep_statistics(frames)
    np.testing.assert_allclose(s["consecutive"], 0.1)
    assert s["max_over_mean"] == pytest.approx(1.0) and s["monotone_from_start"]
    assert s["lipschitz"] == pytest.approx(1.0)
    jump = [np.zeros((2, 2, 3))] * 5 + [np.ones((2, 2, 3))] * 5
    assert sweep_statistics(jump)["max_over_mean"] == pytest.approx(9.0)


def test_training_is_reproducible(data, trained, schema):
    engine, vecs, renders, flat, kit = data
    _, res, pre = trained
    again = train_imitator(flat, renders, kit, ARCH, CFG, pretrain_generator(renders, ARCH, CFG, kit))
    assert [round(r["total"], 6) for r in res.curve] == [round(r["total"], 6) for r in again.curve]
    assert [round(r["loss"], 6) for r in pre.curve] == [round(r["loss"], 6) for r in again.pretrain_curve]
    assert res.curve[1]["lr"] == pytest.approx(CFG.lr)  # decay lands after every second epoch


def test_pretrained_generator_samples(trained):
    pre = trained[2]
    a, b = pre.sample(4, seed=3), pre.sample(4, seed=3)
    assert a.shape == (4, 16, 16, 3) and np.array_equal(a, b)
    assert not np.array_equal(a, pre.sample(4, seed=4))


def test_untrained_errors(schema):
    imitator = Imitator(schema)
    assert not imitator.trained
    with pytest.raises(NotTrainedError):
        imitator.imitate(schema.random_strict(0))
    with pytest.raises(NotTrainedError):
        imitator.save("/tmp/never.pt")


def test_forward_shape_check(trained):
    with pytest.raises(ValueError):
        trained[0].forward(torch.zeros(1, 3))


def test_checkpoint_round_trip(trained, schema, tmp_path):
    imitator = trained[0]
    imitator.save(tmp_path / "imi.pt", {"held_out_l1": 0.1})
    back = Imitator.load(tmp_path / "imi.pt", schema)
    v = schema.random_strict(8)
    assert np.array_equal(back.imitate(v), imitator.imitate(v)) and back.arch == ARCH


def test_metrics_helpers(trained, data, schema):
    imitator = trained[0]
    engine, vecs, renders, _, _ = data
    l1 = held_out_l1(imitator, vecs, renders)
    u8 = (renders * 255).round().astype(np.uint8)
    assert 0 < l1 < 1 and held_out_l1(imitator, vecs, u8) == pytest.approx(l1, abs=2 / 255)
    v = vecs[0]
    attr = schema.discrete_index("glasses_type")
    other = (v.discrete[attr] + 1) % schema.cardinalities[attr]
    r = localization_ratio(imitator, engine, v, attr, other)
    assert r is None or r > 0
