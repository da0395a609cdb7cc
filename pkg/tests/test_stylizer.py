import numpy as np
import pytest
import torch

from avatarfit.engine import Engine, generate_dataset
from avatarfit.engine.render import N_LABELS
from avatarfit.errors import ConfigError, NotTrainedError
from avatarfit.losses import LossKit, StylizeLossWeights
from avatarfit.nets import FeatureExtractor, IdentityEmbedder, SegNet
from avatarfit.stylizer import (
    EXEMPLAR_COUNT,
    FinetuneConfig,
    StylePrior,
    Stylizer,
    StylizerArch,
    StylizerTrainConfig,
    adversarial_finetune,
    exemplar_set,
    skin_color_drift,
    train_stylizer,
)

ARCH = StylizerArch(size=16, n_styles=2, style_dim=8, width=0.25, encoder_width=8)
CFG = StylizerTrainConfig(epochs=2, batch_size=8)


@pytest.fixture(scope="module")
def setup(schema, catalog):
    engine = Engine(schema, catalog, size=16)
    ds = generate_dataset(engine, 24, seed=5)
    torch.manual_seed(0)
    kit = LossKit(FeatureExtractor(0), IdentityEmbedder(dim=16, width=8), SegNet(N_LABELS, width=4))
    res = train_stylizer(ds.selfies, ds.renders, ds.segs, kit, ARCH, CFG, schema)
    return engine, ds, kit, res


def test_encode_shape_and_determinism(setup):
    _, ds, _, res = setup
    sty = res.stylizer
    w = sty.encode(ds.selfies[0])
    assert w.shape == (ARCH.n_styles, ARCH.style_dim) and np.all(np.isfinite(w))
    assert np.array_equal(w, sty.encode(ds.selfies[0]))
    lat, imgs = sty.stylize_many(ds.selfies[:3])
    assert imgs.shape == (3, 16, 16, 3) and imgs.min() >= 0 and imgs.max() <= 1
    np.testing.assert_allclose(lat[0], w, atol=1e-6)


def test_training_is_reproducible(setup, schema):
    _, ds, kit, res = setup
    again = train_stylizer(ds.selfies, ds.renders, ds.segs, kit, ARCH, CFG, schema)
    assert [round(r["total"], 6) for r in res.curve] == [round(r["total"], 6) for r in again.curve]
    assert {"l1", "lpips", "color", "id", "lr"} <= set(res.curve[0])


def test_latent_term_with_unit_rms_codes(setup, schema):
    _, ds, kit, _ = setup
    arch = StylizerArch(size=16, n_styles=2, style_dim=8, width=0.25, encoder_width=8, unit_rms=True)
    res = train_stylizer(ds.selfies, ds.renders, ds.segs, kit, arch, StylizerTrainConfig(epochs=1, batch_size=8,
                                                                                         latent_weight=0.1), schema)
    assert "latent" in res.curve[0]
    w = res.stylizer.encode_many(ds.selfies[:4])
    np.testing.assert_allclose(np.sqrt((w ** 2).mean(axis=2)), 1.0, rtol=1e-4)


def test_frozen_initial_decoder_is_only_inverted(setup, schema):
    _, ds, kit, res = setup
    init = res.stylizer.decoder
    out = train_stylizer(ds.selfies, ds.renders, ds.segs, kit, ARCH, CFG, schema, init_decoder=init)
    for a, b in zip(out.stylizer.decoder.state_dict().values(), init.state_dict().values()):
        assert torch.equal(a, b)
    assert not torch.equal(next(out.stylizer.encoder.parameters()), next(res.stylizer.encoder.parameters()))
    tuned = train_stylizer(ds.selfies, ds.renders, ds.segs, kit, ARCH,
                           StylizerTrainConfig(epochs=1, batch_size=8, freeze_init_decoder=False), schema,
                           init_decoder=init)
    assert any(not torch.equal(a, b) for a, b in zip(tuned.stylizer.decoder.state_dict().values(),
                                                     init.state_dict().values()))


def test_misaligned_inputs_are_rejected(setup):
    _, ds, kit, _ = setup
    with pytest.raises(ConfigError):
        train_stylizer(ds.selfies[:3], ds.renders[:4], ds.segs[:4], kit, ARCH, CFG)


def test_prior_is_built_from_clean_renders(setup):
    _, ds, _, res = setup
    sty = res.stylizer
    assert len(sty.prior) == len(ds)
    np.testing.assert_array_equal(sty.prior.codes, sty.encode_many(ds.renders))


def test_prior_sampling():
    codes = np.arange(24, dtype=np.float32).reshape(3, 2, 4)
    exact = StylePrior(codes, sigma=0.0)
    draws = exact.sample(10, seed=1)
    assert all(any(np.array_equal(d, c) for c in codes) for d in draws)
    jittered = StylePrior(codes, sigma=0.05)
    assert np.array_equal(jittered.sample(5, 2), jittered.sample(5, 2))
    assert not np.array_equal(jittered.sample(5, 2), jittered.sample(5, 3))
    with pytest.raises(NotTrainedError):
        StylePrior(np.zeros((0, 2, 4))).sample(1, 0)


def test_untrained_stylizer_errors():
    sty = Stylizer(None, ARCH)
    with pytest.raises(NotTrainedError):
        sty.encode(np.zeros((16, 16, 3)))
    with pytest.raises(NotTrainedError):
        sty.sample_prior(1, 0)


def test_checkpoint_round_trip(setup, schema, tmp_path):
    _, ds, _, res = setup
    res.stylizer.save(tmp_path / "s.pt")
    back = Stylizer.load(tmp_path / "s.pt", schema)
    assert np.array_equal(back.encode_many(ds.selfies[:2]), res.stylizer.encode_many(ds.selfies[:2]))
    assert np.array_equal(back.prior.codes, res.stylizer.prior.codes) and back.finetuned is None


def test_exemplars_are_neutral_clean_renders(setup):
    engine = setup[0]
    ex = exemplar_set(engine, n=4, seed=0)
    assert ex.dtype == np.uint8 and ex.shape == (4, 16, 16, 3)
    assert EXEMPLAR_COUNT == 150
    assert np.array_equal(ex, exemplar_set(engine, n=4, seed=0))


def test_finetune_defaults_and_run(setup, tmp_path, schema):
    engine, ds, kit, res = setup
    assert FinetuneConfig().weights == StylizeLossWeights(1.0, 12.0, 5.0) and FinetuneConfig().gamma == 10.0
    cfg = FinetuneConfig(steps=3, batch_size=4)
    out = adversarial_finetune(res.stylizer, ds.renders, kit, cfg)
    assert not out.diverged and out.stylizer.finetuned is not None and len(out.curve) >= 1
    sty = out.stylizer
    # the original decoder is untouched and still reachable
    w = sty.encode_many(ds.selfies[:2])
    np.testing.assert_array_equal(sty.decode_many(w, original=True), res.stylizer.decode_many(w))
    assert skin_color_drift(sty, kit, n=8) >= 0.0
    again = adversarial_finetune(res.stylizer, ds.renders, kit, cfg)
    assert [round(r["d_loss"], 6) for r in out.curve] == [round(r["d_loss"], 6) for r in again.curve]
    sty.save(tmp_path / "ft.pt")
    back = Stylizer.load(tmp_path / "ft.pt", schema)
    np.testing.assert_array_equal(back.decode_many(w), sty.decode_many(w))


def test_finetune_needs_prior_and_segnet(setup):
    _, ds, kit, res = setup
    sty = res.stylizer
    bare = Stylizer(sty.schema, sty.arch, sty.encoder, sty.decoder)
    with pytest.raises(NotTrainedError):
        adversarial_finetune(bare, ds.renders, kit, FinetuneConfig(steps=1))
    with pytest.raises(ConfigError):
        adversarial_finetune(sty, ds.renders, LossKit(kit.extractor, kit.embedder), FinetuneConfig(steps=1))
