import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from igcl.losses import (
    LossReport,
    LossWeights,
    check_finite,
    classification_loss,
    highlevel_collab_loss,
    midlevel_collab_loss,
    sample_triplets,
    total_loss,
    triplet_loss,
)

HEADS = ("ori", "sem", "pie", "deg")
seeds = st.integers(0, 2**32 - 1)


def test_weights_validation():
    LossWeights(0, 0, 0, 0, 0)
    for kw in (dict(cls=-1), dict(hcl=float("nan")), dict(margin=float("inf"))):
        with pytest.raises(ValueError):
            LossWeights(**kw)


def test_classification_limits():
    labels = torch.tensor([0, 2, 1])
    perfect = torch.full((3, 3), -1e4, dtype=torch.float64)
    perfect[torch.arange(3), labels] = 1e4
    total, heads = classification_loss({h: perfect for h in HEADS}, labels)
    assert float(total) == 0.0 and set(heads) == set(HEADS)
    uniform = torch.zeros(3, 5, dtype=torch.float64)
    total, _ = classification_loss({h: uniform for h in HEADS}, labels)
    assert float(total) == pytest.approx(4 * math.log(5), rel=1e-14)


def test_classification_rejects_bad_labels():
    with pytest.raises(ValueError):
        classification_loss({"ori": torch.zeros(2, 3)}, torch.tensor([0, 3]))


def test_classification_three_class_oracle(rng):
    z = rng.normal(size=(4, 3))
    y = np.array([0, 1, 2, 1])
    total, _ = classification_loss({"ori": torch.tensor(z)}, torch.tensor(y))
    assert float(total) == pytest.approx(oracles.classification([z], y), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_classification_shift_invariance(seed):
    rng = np.random.default_rng(seed)
    z = torch.tensor(rng.normal(size=(5, 4)))
    y = torch.tensor(rng.integers(0, 4, 5))
    shift = torch.tensor(rng.normal(size=(5, 1)) * 10)
    a, _ = classification_loss({"ori": z}, y)
    b, _ = classification_loss({"ori": z + shift}, y)
    assert float(a) == pytest.approx(float(b), rel=1e-10, abs=1e-12)


def test_sample_triplets_structure(rng):
    labels = np.array([0, 0, 1, 1, 2])
    t = sample_triplets(labels, rng)
    assert t.shape == (4, 3)  # the singleton identity has no positive
    for a, p, n in t:
        assert labels[a] == labels[p] and a != p and labels[a] != labels[n]
    assert sample_triplets(np.zeros(4, int), rng).shape == (0, 3)


def test_triplet_degenerate_cases():
    labels = np.array([0, 0, 1, 1])
    same = torch.ones(4, 3, dtype=torch.float64)
    total, _ = triplet_loss({"ori": same, "sem": same}, labels, 0.3, rng=np.random.default_rng(0))
    assert float(total) == pytest.approx(0.6, rel=1e-14)
    separated = torch.tensor([[0.0, 0], [0, 0], [1, 0], [1, 0]], dtype=torch.float64)
    total, _ = triplet_loss({"ori": separated, "sem": separated}, labels, 0.3, rng=np.random.default_rng(0))
    assert float(total) == 0.0
    with pytest.raises(ValueError):
        triplet_loss({"ori": same}, labels, 0.3)


def test_triplet_fixed_seed_hand_values():
    labels = np.array([0, 0, 1, 1])
    x = torch.tensor([[0.0, 0], [0.1, 0], [0.2, 0], [1.0, 1.0]], dtype=torch.float64)
    trip = sample_triplets(labels, np.random.default_rng(7))
    total, _ = triplet_loss({"ori": x}, labels, 0.3, triplets=trip)
    # each anchor has exactly one positive; the negative is drawn from the other identity
    assert [tuple(r[:2]) for r in trip] == [(0, 1), (1, 0), (2, 3), (3, 2)]
    assert float(total) == pytest.approx(oracles.triplet([x.tolist()], trip.tolist(), 0.3), rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_triplet_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(3), 2)
    x = rng.normal(size=(6, 4))
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    trip = sample_triplets(labels, rng)
    a, _ = triplet_loss({"ori": torch.tensor(x)}, labels, 0.3, triplets=trip)
    b, _ = triplet_loss({"ori": torch.tensor(x @ q)}, labels, 0.3, triplets=trip)
    assert float(a) == pytest.approx(float(b), rel=1e-9, abs=1e-12)


def test_midlevel_examples():
    maps = [torch.rand(2, h, w, dtype=torch.float64) for h, w in ((4, 2), (2, 1), (1, 1))]
    assert float(midlevel_collab_loss(maps, maps)) == 0.0
    assert float(midlevel_collab_loss(maps, [m + 0.5 for m in maps])) == pytest.approx(0.75, rel=1e-14)
    with pytest.raises(ValueError):
        midlevel_collab_loss(maps, [m[:, :1] for m in maps])
    with pytest.raises(ValueError):
        midlevel_collab_loss(maps, maps[:2])


def test_highlevel_examples(rng):
    x = torch.tensor(rng.normal(size=(5, 3)))
    assert float(highlevel_collab_loss(x, x, x)[0]) == 0.0
    c = 0.7
    assert float(highlevel_collab_loss(x + c, x, x)[0]) == pytest.approx(3 * c * c, rel=1e-12)
    with pytest.raises(ValueError):
        highlevel_collab_loss(x[:1], x[:1], x[:1])
    with pytest.raises(ValueError):
        highlevel_collab_loss(x[:, :2], x, x)


def test_highlevel_std_toggle(rng):
    x = torch.tensor(rng.normal(size=(6, 2)))
    y = 3 * x
    var_loss = float(highlevel_collab_loss(y, None, x)[0])
    std_loss = float(highlevel_collab_loss(y, None, x, use_std=True)[0])
    mu_part = float(((y.mean(0) - x.mean(0)) ** 2).sum())
    v = x.var(0, unbiased=False)
    assert var_loss == pytest.approx(mu_part + float(((9 * v - v) ** 2).sum()), rel=1e-12)
    assert std_loss == pytest.approx(mu_part + float(((3 * v.sqrt() - v.sqrt()) ** 2).sum()), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_loss_properties(seed):
    rng = np.random.default_rng(seed)
    xs = [torch.tensor(rng.normal(size=(4, 3))) for _ in range(3)]
    a, _ = highlevel_collab_loss(xs[0], xs[1], xs[2])
    b, _ = highlevel_collab_loss(xs[1], xs[0], xs[2])
    assert float(a) == pytest.approx(float(b), rel=1e-12) and float(a) >= 0
    labels = np.repeat(np.arange(2), 2)
    t, _ = triplet_loss({"ori": xs[0]}, labels, 0.3, rng=rng)
    assert float(t) >= 0


def test_total_loss_exact_sum_and_linearity():
    terms = {k: torch.tensor(v, dtype=torch.float64) for k, v in
             (("cls", 1.25), ("tri", 0.5), ("mcl", 0.125), ("hcl", 2.0))}
    r = total_loss(terms)
    assert r.total == 1.25 + 0.5 + 0.125 + 2.0
    assert float(r.tensor) == r.total
    r0 = total_loss(terms, LossWeights(mcl=0.0))
    r1 = total_loss({**terms, "mcl": torch.tensor(99.0)}, LossWeights(mcl=0.0))
    assert r0.total == r1.total
    eps = 1e-3
    for name in ("cls", "tri", "mcl", "hcl"):
        w = LossWeights(**{name: 1 + eps})
        assert total_loss(terms, w).total - r.total == pytest.approx(eps * float(terms[name]), rel=1e-9)


def test_total_loss_missing_terms_and_gradients():
    x = torch.tensor(2.0, requires_grad=True)
    r = total_loss({"cls": x * 3, "tri": None, "mcl": None, "hcl": x ** 2})
    assert r.tri == r.mcl == 0.0 and r.total == 10.0
    r.tensor.backward()
    assert float(x.grad) == 7.0


def test_check_finite_names_term():
    with pytest.raises(FloatingPointError, match="hcl"):
        check_finite(LossReport(cls=1.0, tri=0.0, mcl=0.0, hcl=float("nan"), total=float("nan")))


def test_gradient_of_weighted_total(rng):
    logits = torch.tensor(rng.normal(size=(4, 3)), requires_grad=True)
    labels = torch.tensor([0, 0, 1, 1])
    trip = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0], [3, 2, 1]])
    w = LossWeights(cls=0.7, tri=1.3, mcl=0.0, hcl=0.4)

    def f():
        cls, _ = classification_loss({"ori": logits}, labels)
        tri, _ = triplet_loss({"ori": logits}, labels, 0.3, triplets=trip)
        hcl, _ = highlevel_collab_loss(logits * 1.5, None, logits ** 2)
        return total_loss({"cls": cls, "tri": tri, "hcl": hcl}, w).tensor

    f().backward()
    worst, n = oracles.grad_check(f, logits.data, logits.grad.clone(), rng, n_probes=20)
    assert n >= 12 and worst < 1e-4  # all 12 entries probed
