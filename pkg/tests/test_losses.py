import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tsbn.errors import InvalidInput
from tsbn.losses import (downstream_loss, restoration_loss, transfer_loss, weighted_bce,
                         weighted_bce_with_logits)

from gradcheck_util import TinyBundle, check_all


def test_restoration_examples(rng):
    t = torch.from_numpy(rng.random((2, 1, 3, 3)))
    assert float(restoration_loss(t, t)) == 0.0
    assert float(restoration_loss(t + 0.1, t)) == pytest.approx(0.01, abs=1e-12)


def test_restoration_matches_loop(rng):
    pred = rng.random((2, 3, 3))
    target = rng.random((2, 3, 3))
    total = 0.0
    for b in range(2):
        for i in range(3):
            for j in range(3):
                total += (pred[b, i, j] - target[b, i, j]) ** 2
    assert float(restoration_loss(pred, target)) == pytest.approx(total / 18, abs=1e-12)


def test_shape_mismatch():
    with pytest.raises(InvalidInput):
        restoration_loss(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(InvalidInput):
        transfer_loss(np.zeros((2, 4)), np.zeros((2, 5)))
    with pytest.raises(InvalidInput):
        weighted_bce(np.full(3, 0.5), np.zeros(2))


def test_transfer_examples(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    assert float(transfer_loss(a, a)) == 0.0
    assert float(transfer_loss(a, b)) == float(transfer_loss(b, a))
    total = sum((a[i, k] - b[i, k]) ** 2 for i in range(3) for k in range(4))
    assert float(transfer_loss(a, b)) == pytest.approx(total / 12, abs=1e-12)


def test_bce_examples():
    assert float(weighted_bce([0.5], [1], 15)) == pytest.approx(15 * math.log(2), abs=1e-12)
    assert float(weighted_bce([0.5], [1], 15)) == pytest.approx(10.3972, abs=1e-4)
    for w in (0.1, 1.0, 15.0):
        assert float(weighted_bce([0.5], [0], w)) == pytest.approx(math.log(2), abs=1e-12)


def test_bce_unit_weight_matches_plain(rng):
    p = rng.uniform(0.01, 0.99, 64)
    y = rng.integers(0, 2, 64)
    plain = -np.mean([yi * math.log(pi) + (1 - yi) * math.log(1 - pi) for pi, yi in zip(p, y)])
    assert float(weighted_bce(p, y, 1.0)) == pytest.approx(plain, abs=1e-12)
    torch_ref = torch.nn.functional.binary_cross_entropy(torch.from_numpy(p), torch.from_numpy(y).double())
    assert float(weighted_bce(p, y, 1.0)) == pytest.approx(float(torch_ref), abs=1e-12)


def test_bce_clamps_extremes():
    assert math.isfinite(float(weighted_bce([0.0, 1.0], [1, 0], 15)))
    assert float(weighted_bce_with_logits([100.0], [0], 15)) == pytest.approx(-math.log(1e-7), rel=1e-6)


def test_bce_errors():
    with pytest.raises(InvalidInput):
        weighted_bce([0.5], [2], 15)
    with pytest.raises(InvalidInput):
        weighted_bce([0.5], [1], 0)


def test_bce_with_logits_agrees(rng):
    logits = rng.normal(size=20)
    y = rng.integers(0, 2, 20)
    probs = 1 / (1 + np.exp(-logits))
    assert float(weighted_bce_with_logits(logits, y, 15)) == pytest.approx(float(weighted_bce(probs, y, 15)), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6), st.floats(0.1, 30))
def test_bce_monotone(p1, p2, w):
    if abs(p1 - p2) < 1e-9:
        return
    lo, hi = min(p1, p2), max(p1, p2)
    assert float(weighted_bce([hi], [1], w)) < float(weighted_bce([lo], [1], w))
    assert float(weighted_bce([hi], [0], w)) > float(weighted_bce([lo], [0], w))


def test_downstream_examples(rng):
    assert downstream_loss(2.0, 3.0, 0.5) == 4.0
    assert downstream_loss(7.3, 3.0, 0.0) == 3.0
    for _ in range(50):
        ct, bce, alpha = rng.random(3) * 10
        diff = downstream_loss(ct, bce, 2 * alpha) - downstream_loss(ct, bce, alpha)
        assert diff == pytest.approx(alpha * ct, rel=1e-12, abs=1e-12)
    with pytest.raises(InvalidInput):
        downstream_loss(1.0, 1.0, -1.0)


def test_transfer_positive_for_distinct(rng):
    a = rng.normal(size=(2, 5))
    b = a.copy()
    b[1, 3] += 1e-3
    assert float(transfer_loss(a, b)) > 0


def test_permutation_invariance(rng):
    perm = rng.permutation(6)
    a, b = rng.random((6, 4)), rng.random((6, 4))
    p, y = rng.uniform(0.1, 0.9, 6), rng.integers(0, 2, 6)
    assert float(transfer_loss(a[perm], b[perm])) == pytest.approx(float(transfer_loss(a, b)), abs=1e-15)
    assert float(restoration_loss(a[perm], b[perm])) == pytest.approx(float(restoration_loss(a, b)), abs=1e-15)
    assert float(weighted_bce(p[perm], y[perm], 15)) == pytest.approx(float(weighted_bce(p, y, 15)), abs=1e-14)


def test_tiny_model_size():
    assert sum(p.numel() for p in TinyBundle().parameters()) <= 200


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(seed):
    errors = check_all(seed)
    assert max(errors.values()) <= 1e-4, errors
