"""
Metrics and cross-validation
============================

Scores become a positive prediction when ``score >= threshold``. Rates whose
denominator is empty come back as ``None`` instead of a made-up number.
"""
import numpy as np

from tsbn import TrainConfig, cross_validate, evaluate_scores, make_synthetic
from tsbn.metrics import auc_rank, roc_curve

scores = np.array([0.9, 0.8, 0.55, 0.5, 0.3, 0.2, 0.1])
labels = np.array([1, 1, 0, 1, 0, 0, 0])
report = evaluate_scores(scores, labels, threshold=0.5)
print(report.counts)
for name, value in report.scalars().items():
    print(f"{name:12s} {value:.4f}")

print("ROC:", roc_curve(scores, labels))
# AUC depends only on the ordering of scores
print("AUC", auc_rank(scores, labels), "after exp:", auc_rank(np.exp(5 * scores), labels))

# A class with no members leaves its rate undefined
print("no positives ->", evaluate_scores([0.2, 0.7], [0, 0]).sensitivity)

# Cross-validation on shared folds: two trainers, same split seed
data = make_synthetic(n_samples=60, seed=4)
config = TrainConfig(epochs=20, seed=4)
for method in ("plain", "tsbn"):
    result = cross_validate(method, data, config, k=3, split_seed=4)
    mean, std = result.report.mean, result.report.std
    print(f"{method:6s} accuracy {mean['accuracy']:.3f} +/- {std['accuracy']:.3f}  "
          f"pooled AUC {result.report.pooled.auc:.3f}")
