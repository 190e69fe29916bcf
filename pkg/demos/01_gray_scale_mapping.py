"""
Gray-scale mapping targets
==========================

The restoration channel never sees a clean copy of its input as the target.
Instead the label is baked into the target by shifting every pixel up (malignant)
or down (benign) by half the mapping distance ``d``.
"""
import numpy as np

from tsbn import gsim_target, make_synthetic

data = make_synthetic(n_samples=6, seed=1)
sample = data.samples[0]
print("sample", sample.id, "label", sample.label)

# Both possible targets for the same image
up = gsim_target(sample.image, 1, d=0.5).pixels
down = gsim_target(sample.image, 0, d=0.5).pixels
print("malignant target - image:", np.unique(np.round(up - sample.image, 12)))
print("benign target - image:   ", np.unique(np.round(down - sample.image, 12)))

# The two targets are always exactly d apart, and edges are untouched
print("gap between targets:", float((up - down).mean()))
print("horizontal gradients kept:", np.allclose(np.diff(up, axis=1), np.diff(sample.image, axis=1)))

# The targets leave [0, 1]; nothing is clamped
print("target range: [%.3f, %.3f]" % (down.min(), up.max()))

# d = 0 turns the pretext task into plain auto-encoding
print("identity at d=0:", np.array_equal(gsim_target(sample.image, 1, d=0.0).pixels, sample.image))
