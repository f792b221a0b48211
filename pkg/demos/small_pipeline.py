"""
The whole pipeline on a few hundred images
==========================================

Classifier -> SVM surrogate -> alterfactual generator -> evaluation, on a
small subset and a short schedule so it finishes in minutes on a CPU. The
numbers are not meant to match a full run; the point is to see every
stage and its outputs. Results go to runs/demo_small/.
"""
from pathlib import Path

import numpy as np
import torch

from alterfactual.boundary import SvmConfig, fit_surrogate
from alterfactual.classifier import ClassifierConfig, penultimate_features, predict, predicted_class, train_classifier
from alterfactual.data import load_binary_subset, to_unit_range
from alterfactual.explainer import ExplainerConfig, explain, train_explainer
from alterfactual.metrics import evaluate
from alterfactual.render import save_grid

torch.set_num_threads(1)
out = Path("runs/demo_small")
rng = np.random.default_rng(0)

train = load_binary_subset("fashion_mnist", "ankle_boot", "sneaker", "train")
test = load_binary_subset("fashion_mnist", "ankle_boot", "sneaker", "test")
train = train.subset(np.sort(rng.permutation(len(train))[:400]))
test = test.subset(np.sort(rng.permutation(len(test))[:64]))
print("train", train.class_counts(), "test", test.class_counts())

# 1. the classifier to be explained
clf = train_classifier(train, test, ClassifierConfig(epochs=3))
print(f"classifier test accuracy {100 * clf.history['test_accuracy']:.1f}%")

# 2. its decisions, and a linear surrogate of them in feature space
with torch.no_grad():
    x01 = to_unit_range(train.to_tensor())
    feats = penultimate_features(clf, x01).double().numpy()
    decisions = predicted_class(predict(clf, x01))
surr = fit_surrogate(feats, decisions, SvmConfig())
print("surrogate held-out agreement", surr.fit_report["holdout_agreement"])

# 3. a few hundred generator steps
cfg = ExplainerConfig(mode="alterfactual", epochs=1, steps_per_epoch=300)
model = train_explainer("alterfactual", clf, surr, train, cfg, run_dir=out)
print("last epoch losses", {k: round(v, 3) for k, v in model.history[-1].items()})

# 4. score the test subset and look at a few
originals = test.to_tensor()
explanations = explain(model, originals, seed=0)
report = evaluate(clf, surr, originals, explanations, "alterfactual")
print(report.summary(), "boundary drift", round(report.mean_boundary_drift, 3))
save_grid(out / "grid.png", originals[:8].permute(0, 2, 3, 1).numpy(), explanations[:8].permute(0, 2, 3, 1).numpy())
print("wrote", out / "grid.png")
