import warnings

import numpy as np
import pytest
import torch

from alterfactual.boundary import HyperplaneSurrogate
from alterfactual.classifier import TrainingError
from alterfactual.data import LabeledImageSet
from alterfactual.explainer import (
    DiscriminatorNet,
    ExplainerConfig,
    ExplainerModel,
    GeneratorNet,
    LossWeights,
    explain,
    generate,
    train_explainer,
)
from conftest import make_toy_classifier

SMALL_ENC, SMALL_DEC = (8, 16, 16, 16), (16, 16, 8)


def small_model(mode="alterfactual", res=16):
    torch.manual_seed(0)
    G = GeneratorNet(1, SMALL_ENC, SMALL_DEC, dropout_layers=2)
    D = DiscriminatorNet(1, res, filters=(8, 16), label_map=4)
    return ExplainerModel(G, D, mode, ExplainerConfig(mode=mode))


def toy_set(n=6, res=16, seed=0):
    rng = np.random.default_rng(seed)
    imgs = rng.uniform(-1, 1, (n, res, res, 1)).astype(np.float32)
    return LabeledImageSet(imgs, np.arange(n) % 2, "train", ("a", "b"))


def test_full_size_shapes_and_bottleneck():
    torch.manual_seed(0)
    G = GeneratorNet()
    x = torch.rand(1, 1, 128, 128) * 2 - 1
    h = x
    for layer in G.down:
        h = layer(h)
    assert h.shape == (1, 512, 1, 1)
    with torch.no_grad():
        out = G(x)
    assert out.shape == x.shape and out.abs().max() <= 1
    D = DiscriminatorNet()
    assert D(x, torch.tensor([1])).shape == (1, 1, 8, 8)


def test_discriminator_uses_the_label():
    D = DiscriminatorNet(1, 16, filters=(8, 16), label_map=4).eval()
    x = torch.rand(1, 1, 16, 16)
    assert not torch.equal(D(x, torch.tensor([0])), D(x, torch.tensor([1])))


def test_explain_is_seeded_and_batch_independent():
    model = small_model()
    x = toy_set(3).to_tensor()
    a = explain(model, x, seed=7)
    assert torch.equal(a, explain(model, x, seed=7))
    assert torch.equal(a[1:2], explain(model, x[1:2], seed=8))
    assert not torch.equal(a, explain(model, x, seed=9))  # dropout is the noise source


def test_explain_rejects_unprocessed_input():
    model = small_model()
    with pytest.raises(ValueError):
        explain(model, torch.rand(1, 1, 28, 28), 0)
    with pytest.raises(ValueError):
        explain(model, torch.full((1, 1, 16, 16), 2.0), 0)


def test_generate_record():
    model = small_model()
    clf = make_toy_classifier(resolution=16, dtype=torch.float32)
    surr = HyperplaneSurrogate(np.ones(4), 0.0, np.zeros(4), np.ones(4))
    x = toy_set(1).to_tensor()[0]
    rec = generate(model, x, seed=3, clf=clf, surr=surr)
    again = generate(model, x, seed=3, clf=clf, surr=surr)
    assert np.array_equal(rec.explanation, again.explanation)
    assert 0 <= rec.ssim <= 1 and rec.dist_orig >= 0
    assert rec.valid == ((rec.pred_expl[1] >= 0.5) == bool(rec.target_class))


def test_counterfactual_config_drops_boundary_weight():
    with pytest.warns(UserWarning, match="forced to 0"):
        cfg = ExplainerConfig(mode="counterfactual", weights=(1, 1, 1, 1))
    assert cfg.weights == LossWeights(1, 1, 1, 0) and not cfg.boundary_active
    assert ExplainerConfig(mode="alterfactual").boundary_active
    with pytest.raises(ValueError):
        ExplainerConfig(mode="semifactual")
    with pytest.raises(ValueError):
        ExplainerConfig(batch_size=4)


def _train(mode, tmp_path, surr=True, **kw):
    clf = make_toy_classifier(resolution=16, dtype=torch.float32)
    s = HyperplaneSurrogate(np.ones(4), 0.0, np.zeros(4), np.ones(4)) if surr else None
    torch.manual_seed(0)
    G = GeneratorNet(1, SMALL_ENC, SMALL_DEC, dropout_layers=2)
    D = DiscriminatorNet(1, 16, filters=(8, 16), label_map=4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = ExplainerConfig(mode=mode, epochs=2, steps_per_epoch=3, ssim={"win_size": 5}, monitor_samples=2, **kw)
    return train_explainer(mode, clf, s, toy_set(), cfg, run_dir=tmp_path, generator=G, discriminator=D)


@pytest.mark.parametrize("mode", ["alterfactual", "counterfactual"])
def test_training_smoke_and_checkpoint(tmp_path, mode):
    model = _train(mode, tmp_path, surr=mode == "alterfactual")
    assert model.epoch == 2 and len(model.history) == 2
    assert all(np.isfinite(v) for h in model.history for v in h.values())
    assert (tmp_path / "samples" / "epoch_2.png").exists()
    back = ExplainerModel.load(tmp_path / f"explainer_{mode}.ckpt")
    x = toy_set(2).to_tensor()
    assert torch.equal(explain(back, x, 5), explain(model, x, 5))
    assert back.epoch == 2 and back.mode == mode


def test_training_is_deterministic(tmp_path):
    a = _train("alterfactual", tmp_path / "a")
    b = _train("alterfactual", tmp_path / "b")
    assert a.history == b.history


def test_alterfactual_without_surrogate_rejected(tmp_path):
    with pytest.raises(ValueError, match="surrogate"):
        _train("alterfactual", tmp_path, surr=False)


def test_non_finite_loss_keeps_last_checkpoint(tmp_path):
    _train("counterfactual", tmp_path, surr=False, seed=0)
    before = (tmp_path / "explainer_counterfactual.ckpt").read_bytes()
    clf = make_toy_classifier(resolution=16, dtype=torch.float32)
    G = GeneratorNet(1, SMALL_ENC, SMALL_DEC, dropout_layers=2)
    with torch.no_grad():
        G.out[0].bias.fill_(float("nan"))
    cfg = ExplainerConfig(mode="counterfactual", epochs=1, steps_per_epoch=2, ssim={"win_size": 5})
    with pytest.raises(TrainingError):
        train_explainer("counterfactual", clf, None, toy_set(), cfg, run_dir=tmp_path, generator=G,
                        discriminator=DiscriminatorNet(1, 16, filters=(8, 16), label_map=4))
    assert (tmp_path / "explainer_counterfactual.ckpt").read_bytes() == before
