"""
Training the two channels
=========================

Each mini-batch is used twice. First the restoration network takes one step on
the gray-scale mapping target. Then the classifier and both transfer branches
take one step on ``alpha * Loss_CT + Loss_BCE`` while the restoration encoder
is read without gradients.

This runs 20 epochs on a small phantom set (under a minute on one core).
"""
from tsbn import TrainConfig, evaluate, make_synthetic, stratified_holdout, train_tsbn
from tsbn.trainer import param_checksum

data = make_synthetic(n_samples=80, seed=2)
train_set, test_set = stratified_holdout(data, 0.2, seed=2)

config = TrainConfig(epochs=20, seed=2)
out = train_tsbn(train_set, config, check_partition=True)
print(f"trained in {out.seconds:.1f}s")

# With w=15 the classifier first predicts everything malignant (train_acc near
# the positive fraction) and only later starts separating the classes
for epoch, row in enumerate(out.history.rows):
    print(epoch, "  ".join(f"{k}={v:.4f}" for k, v in row.items()))

report = evaluate(out, test_set)
print("held-out accuracy %.3f  AUC %.3f" % (report.accuracy, report.auc))

# Only the classifier is needed at inference time
print("classifier checksum", param_checksum(out.classifier)[:16])

# The history is plain CSV
print(out.history.to_csv().splitlines()[0])

# The restoration output drifts towards the label-conditioned target. After a
# short run it mostly captures the average shift (most samples are benign); the
# split between up and down shifts takes longer to appear
import numpy as np
import torch

pick = [*np.flatnonzero(test_set.labels == 0)[:2], *np.flatnonzero(test_set.labels == 1)[:2]]
with torch.no_grad():
    x = torch.from_numpy(test_set.images[pick]).float().unsqueeze(1)
    restored, _ = out.bundle.restoration(x)
shift = (restored - x).mean(dim=(1, 2, 3)).numpy()
for label, value in zip(test_set.labels[pick], shift):
    print(f"label {label}: mean restored shift {value:+.3f}")
