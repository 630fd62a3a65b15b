import numpy as np
import pytest
import torch

from igcl.backbone import BackboneConfig, init_backbone
from igcl.core import Batch
from igcl.saj import JigsawPlan, apply_jigsaw, plan_jigsaw, saj_forward


def _batch(P, K):
    return Batch(indices=tuple(range(P * K)), labels=tuple(np.repeat(np.arange(P) + 10, K).tolist()), P=P, K=K)


def test_plan_layout():
    plan = plan_jigsaw(_batch(8, 4), 64)
    assert plan.pairs == tuple((4 * k, 4 * k + 1) for k in range(8))
    assert plan.split_row == 32
    assert plan_jigsaw(_batch(3, 1), 64).pairs == ()
    assert plan_jigsaw(_batch(2, 2), 7).split_row == 4  # odd height: extra row to the upper half


def test_plan_check():
    with pytest.raises(ValueError):
        JigsawPlan(((0, 2),), 2).check([1, 1, 2])
    with pytest.raises(ValueError):
        JigsawPlan(((0, 1), (1, 2)), 2).check([1, 1, 1])


def test_swap_halves_exactly():
    a = np.zeros((1, 4, 2, 1))
    b = np.ones((1, 4, 2, 1))
    out = apply_jigsaw(np.concatenate([a, b]), JigsawPlan(((0, 1),), 2))
    assert out[0, :2].sum() == 0 and np.all(out[0, 2:] == 1)
    assert np.all(out[1, :2] == 1) and out[1, 2:].sum() == 0


def test_identical_pair_unchanged():
    img = np.random.default_rng(0).random((1, 6, 3, 3))
    imgs = np.concatenate([img, img])
    assert np.array_equal(apply_jigsaw(imgs, JigsawPlan(((0, 1),), 3)), imgs)


def test_out_of_range():
    with pytest.raises(IndexError):
        apply_jigsaw(np.zeros((2, 4, 2, 3)), JigsawPlan(((0, 5),), 2))


def test_shared_weights():
    model = init_backbone(BackboneConfig.tiny(3), seed=0)
    x = torch.rand(4, 3, 64, 32)
    model.eval()
    with torch.no_grad():
        assert torch.equal(saj_forward(x, model).feature, model(x).feature)
        same = torch.cat([x[:1], x[:1]])
        jig = apply_jigsaw(same, plan_jigsaw(_batch(1, 2), 64), height_axis=2)
        assert torch.equal(saj_forward(jig, model).feature, model(same).feature)


def test_saj_loss_updates_backbone():
    model = init_backbone(BackboneConfig.tiny(3), seed=0)
    before = model.blocks[0].attn.qkv.weight.detach().clone()
    opt = torch.optim.SGD(model.parameters(), lr=0.1)
    out = saj_forward(torch.rand(4, 3, 64, 32), model)
    torch.nn.functional.cross_entropy(out.logits, torch.tensor([0, 0, 1, 1])).backward()
    assert model.blocks[0].attn.qkv.weight.grad.abs().sum() > 0
    opt.step()
    assert not torch.equal(before, model.blocks[0].attn.qkv.weight)
