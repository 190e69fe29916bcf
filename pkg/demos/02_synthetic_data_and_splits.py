"""
Synthetic phantoms and stratified folds
=======================================

Real mammograms cannot be shipped, so the benchmark uses smooth phantoms:
a textured background with an elliptical mass added to the malignant ones.
``separability`` scales the mass contrast relative to the noise.
"""
import numpy as np

from tsbn import SynthParams, make_synthetic, stratified_holdout, stratified_kfold

params = SynthParams(n_samples=120, separability=0.7, seed=0)
data = make_synthetic(params)
print(data.name, len(data), "images of", data.images.shape[1:], "with", data.n_positive, "positive")

# How far apart are the classes on a crude statistic?
means = data.images.mean(axis=(1, 2))
print("mean intensity  benign %.3f  malignant %.3f" % (means[data.labels == 0].mean(),
                                                       means[data.labels == 1].mean()))

# Lowering separability makes the masses fade into the texture
faint = make_synthetic(params, separability=0.2)
faint_means = faint.images.mean(axis=(1, 2))
print("separability 0.2 gap: %.3f" % (faint_means[faint.labels == 1].mean() - faint_means[faint.labels == 0].mean()))

# Five folds keep the class ratio; the split seed is separate from any training seed
split = stratified_kfold(data, k=5, seed=0)
for f, (train_ids, test_ids) in enumerate(split.folds):
    test = data.subset(test_ids)
    print(f"fold {f}: {len(train_ids)} train, {len(test)} test, {test.n_positive} positive in test")

train, test = stratified_holdout(data, 0.2, seed=0)
print("holdout:", len(train), "train /", len(test), "test")
assert set(train.ids).isdisjoint(test.ids)
