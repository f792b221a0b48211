"""
A linear surrogate of a decision boundary
==========================================

The boundary loss needs a distance to the classifier's decision boundary.
A linear SVM fit in feature space stands in for it. Here the "features"
are 2-D points so the geometry is easy to follow.
"""
import numpy as np

from alterfactual.boundary import SvmConfig, fit_surrogate

rng = np.random.default_rng(0)
x = rng.normal(size=(500, 2)) * [2.0, 0.5]
decisions = (x[:, 0] + 0.5 * x[:, 1] > 0.3).astype(int)  # the "classifier"

surr = fit_surrogate(x, decisions, SvmConfig(C=10))
print("fit report:", surr.fit_report)

# w and b live in standardized coordinates; map them back for display
w_raw = surr.w / surr.std
b_raw = surr.b - (surr.w * surr.mean / surr.std).sum()
print("raw-space normal (normalized):", w_raw / np.linalg.norm(w_raw), "offset", b_raw / np.linalg.norm(w_raw))

probe = np.array([[0.3, 0.0], [2.0, 0.0], [-2.0, 1.0]])
for p, d, c in zip(probe, surr.distance(probe), surr.predict(probe)):
    print(f"point {p}: class {c}, distance {d:.3f}")

# rescaling (w, b) moves nothing
print("scale invariant:", np.allclose(surr.scaled(25.0).distance(probe), surr.distance(probe)))
