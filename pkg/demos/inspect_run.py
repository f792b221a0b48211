"""
Reading a finished run
======================

After the CLI has trained and evaluated an explainer, everything needed to
inspect it sits in the run directory. Pass the directory as the first
argument (default runs/fashion_mnist).
"""
import json
import sys
from pathlib import Path

import numpy as np

run = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/fashion_mnist")

for name in ("classifier_metrics.json", "svm_metrics.json"):
    path = run / name
    if path.exists():
        m = json.loads(path.read_text())
        print(name, {k: v for k, v in m.items() if not isinstance(v, (list, dict))})

for mode in ("alterfactual", "counterfactual"):
    path = run / f"eval_{mode}" / "report.json"
    if not path.exists():
        print(f"{mode}: not evaluated yet")
        continue
    report = json.loads(path.read_text())
    print(f"{mode}: n={report['n']} validity={report['validity_pct']:.2f}% ssim={report['mean_ssim']:.3f}")

    rows = report["records"]
    ssims = np.array([r["ssim"] for r in rows])
    valid = np.array([r["valid"] for r in rows])
    # where do invalid explanations sit on the similarity scale?
    if (~valid).any():
        print(f"  mean ssim valid {ssims[valid].mean():.3f} / invalid {ssims[~valid].mean():.3f}")
    if rows[0]["dist_orig"] is not None:
        drift = np.array([abs(r["dist_orig"] - r["dist_expl"]) for r in rows])
        print(f"  boundary drift median {np.median(drift):.3f}, 90th pct {np.percentile(drift, 90):.3f}")
    worst = np.argsort(ssims)[::-1][:3] if mode == "alterfactual" else np.argsort(ssims)[:3]
    print("  least successful ids:", [rows[i]["id"] for i in worst])
