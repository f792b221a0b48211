import json

import numpy as np
import pytest
from PIL import Image

from alterfactual.cli import main
from alterfactual.config import ConfigError, ExperimentConfig
from alterfactual.render import interpolation_frames
from conftest import _fake_idx_dataset

TINY = """\
run_dir = {run_dir}

[data]
dataset = mnist
class_a = 3
class_b = 8
cache_dir = {cache}

[classifier]
epochs = 4
batch_size = 4
lr = 1e-2

[gan]
mode = {mode}
epochs = 1
steps_per_epoch = 2
lambdas = {lambdas}

[eval]
limit = 3
"""


def write_config(path, run_dir, cache, mode="alterfactual", lambdas="1, 1, 1, 1"):
    path.write_text(TINY.format(run_dir=run_dir, cache=cache, mode=mode, lambdas=lambdas))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Runs every command once on a tiny fake MNIST at 128 px."""
    root = tmp_path_factory.mktemp("cli")
    (root / "cache" / "mnist").mkdir(parents=True)
    _fake_idx_dataset(root / "cache" / "mnist", n_per_class=6)
    cfg = write_config(root / "tiny.cfg", root / "run", root / "cache")
    codes = {}
    for cmd in ("train-classifier", "fit-svm", "train-explainer", "evaluate"):
        codes[cmd] = main([cmd, "--config", str(cfg)])
    codes["render"] = main(["render", "--config", str(cfg), "--indices", "0,2", "--steps", "5"])
    return root, cfg, codes


def test_pipeline_runs_and_writes_artifacts(pipeline):
    root, _, codes = pipeline
    assert codes == dict.fromkeys(codes, 0)
    run = root / "run"
    for name in ("classifier.ckpt", "classifier_metrics.json", "surrogate.bin", "svm_metrics.json",
                 "explainer_alterfactual.ckpt", "explainer_alterfactual_metrics.json",
                 "eval_alterfactual/report.json", "eval_alterfactual/report.csv",
                 "render_alterfactual/strip_0.png", "render_alterfactual/grid.png", "samples/epoch_1.png"):
        assert (run / name).exists(), name
    report = json.loads((run / "eval_alterfactual" / "report.json").read_text())
    assert report["n"] == 3 and 0 <= report["mean_ssim"] <= 1
    strip = np.asarray(Image.open(run / "render_alterfactual" / "strip_0.png"))
    assert strip.shape[1] == 5 * 128 + 6 * 2  # five frames with padding


def test_evaluate_is_reproducible(pipeline, capsys):
    root, cfg, _ = pipeline
    report = root / "run" / "eval_alterfactual" / "report.json"
    first = report.read_bytes()
    assert main(["evaluate", "--config", str(cfg)]) == 0
    assert report.read_bytes() == first
    assert capsys.readouterr().out.startswith("validity=")


def test_missing_artifacts_exit_4(tmp_path, fake_cache):
    cfg = write_config(tmp_path / "c.cfg", tmp_path / "run", fake_cache)
    for cmd in ("fit-svm", "train-explainer", "evaluate", "render"):
        assert main([cmd, "--config", str(cfg)]) == 4


def test_missing_dataset_exits_4(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", tmp_path / "run", tmp_path / "nowhere")
    from unittest import mock

    with mock.patch("urllib.request.urlopen", side_effect=OSError("offline")):
        assert main(["train-classifier", "--config", str(cfg)]) == 4


@pytest.mark.parametrize("line", [
    "gan.bogus = 1",
    "gan.mode = semifactual",
    "classifier.epochs = -3",
    "gan.lambdas = 1, 1",
    "data.resolution = 100",
    "classifier.lr = fast",
])
def test_config_errors_exit_2(tmp_path, fake_cache, line):
    cfg = write_config(tmp_path / "c.cfg", tmp_path / "run", fake_cache)
    cfg.write_text(line + "\n" + cfg.read_text())
    assert main(["train-classifier", "--config", str(cfg)]) == 2


def test_missing_config_exits_2(tmp_path):
    assert main(["evaluate", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_render_steps_validated(pipeline):
    _, cfg, _ = pipeline
    assert main(["render", "--config", str(cfg), "--steps", "1"]) == 2
    assert main(["render", "--config", str(cfg), "--indices", "99"]) == 2


def test_counterfactual_boundary_weight_is_dropped(pipeline):
    root, _, _ = pipeline
    cfg = write_config(root / "cf.cfg", root / "run", root / "cache", mode="counterfactual")
    with pytest.warns(UserWarning, match="forced to 0"):
        assert main(["train-explainer", "--config", str(cfg)]) == 0
    saved = json.loads((root / "run" / "explainer_counterfactual_metrics.json").read_text())
    assert saved["config"]["weights"]["boundary"] == 0.0
    assert "boundary" not in saved["history"][0] or saved["history"][0]["boundary"] == 0.0


def test_config_sections_and_dotted_keys(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("run_dir = r\ngan.mode = counterfactual\n[svm]\nC = 2.5\n")
    cfg = ExperimentConfig.from_file(path)
    assert cfg.gan.mode == "counterfactual" and cfg.svm.C == 2.5 and cfg.run_dir == "r"
    path.write_text("gan.mode = counterfactual\n[gan]\nmode = alterfactual\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(path)


# -- interpolation strips -----------------------------------------------------

def test_interpolation_frames():
    rng = np.random.default_rng(0)
    x, x_hat = rng.uniform(-1, 1, (2, 8, 8, 1))
    frames = interpolation_frames(x, x_hat, 5)
    assert frames.shape == (5, 8, 8, 1)
    assert np.array_equal(frames[0], x) and np.array_equal(frames[-1], x_hat)
    np.testing.assert_allclose(frames[2], (x + x_hat) / 2, atol=1e-15)
    d = np.diff(frames, axis=0) * np.sign(x_hat - x)[None]
    assert (d >= 0).all()
    with pytest.raises(ValueError):
        interpolation_frames(x, x_hat, 1)
