import numpy as np
import pytest
import torch

from polypsynth.checkpoint import Checkpoint
from polypsynth.data import DatasetManifest, load_dataset, quantize
from polypsynth.edges import extract_edges
from polypsynth.exceptions import InsufficientDataError, InvalidArgumentError, MissingAnnotationError, ShapeError
from polypsynth.inpaint import (
    EdgeConnectInpainter,
    InpaintConfig,
    InpaintEvalReport,
    InpaintEvalRow,
    composite,
    evaluate_checkpoint,
    inpaint_polyp,
)
from polypsynth.inpaint import losses
from polypsynth.inpaint.networks import InpaintGenerator

TINY = dict(resolution=16, width=8, n_downsample=1, n_res_blocks=1, batch_size=4, eval_every=1)


def tiny(**kw):
    return EdgeConnectInpainter(**{**TINY, **kw})


def random_triple(rng, size=16):
    img = rng.uniform(size=(size, size, 3))
    mask = (rng.uniform(size=(size, size)) > rng.uniform(0.2, 0.8)).astype(np.uint8)
    edges = (rng.uniform(size=(size, size)) > 0.8).astype(np.uint8)
    return img, edges, mask


def test_composite_invariant_50_triples():
    rng = np.random.default_rng(0)
    models = [tiny(seed=s).initialize().to_checkpoint() for s in range(5)]
    for k in range(50):
        img, edges, mask = random_triple(rng)
        out = inpaint_polyp(models[k % 5], img, edges, mask)
        outside = mask == 0
        assert np.array_equal(out[outside], img[outside])
        # inside the hole values are on the 8-bit grid and in range
        inside = out[mask == 1]
        assert np.array_equal(inside, np.round(inside * 255) / 255)
        assert inside.min() >= 0 and inside.max() <= 1


def test_empty_mask_is_identity():
    img, edges, _ = random_triple(np.random.default_rng(1))
    out = inpaint_polyp(tiny().initialize(), img, edges, np.zeros((16, 16), np.uint8))
    assert np.array_equal(out, img)


def test_composite_function():
    gen = np.full((2, 2, 3), 0.1234)
    orig = np.zeros((2, 2, 3))
    m = np.array([[1, 0], [0, 1]])
    out = composite(gen, orig, m)
    np.testing.assert_array_equal(out[0, 0], quantize(gen)[0, 0])
    np.testing.assert_array_equal(out[0, 1], 0)


def test_inference_deterministic():
    model = tiny(seed=3).initialize()
    img, edges, mask = random_triple(np.random.default_rng(2))
    a = model.inpaint([img], [edges], [mask])[0]
    b = EdgeConnectInpainter.from_checkpoint(model.to_checkpoint()).inpaint([img], [edges], [mask])[0]
    assert np.array_equal(a, b)


def test_shape_mismatch():
    model = tiny().initialize()
    with pytest.raises(ShapeError):
        model.inpaint([np.zeros((8, 8, 3))], [np.zeros((8, 8))], [np.zeros((8, 8))])


def test_stage_b_l1_gradient_matches_finite_differences():
    torch.manual_seed(0)
    net = InpaintGenerator(width=4, n_downsample=0, n_res_blocks=0).double()
    g = torch.Generator().manual_seed(1)
    x = torch.rand(2, 5, 6, 6, generator=g, dtype=torch.float64)
    target = torch.rand(2, 3, 6, 6, generator=g, dtype=torch.float64)
    mask = (torch.rand(2, 1, 6, 6, generator=g) > 0.5).double()

    def loss():
        return losses.hole_l1_loss(net(x), target, mask)

    params = list(net.parameters())
    net.zero_grad()
    loss().backward()
    analytic = [p.grad.clone() for p in params]
    eps = 1e-6
    checked = 0
    rng = np.random.default_rng(0)
    for p, grad in zip(params, analytic):
        flat = p.data.view(-1)
        for i in rng.choice(flat.numel(), size=min(10, flat.numel()), replace=False):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                up = loss().item()
                flat[i] = orig - eps
                down = loss().item()
                flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = grad.view(-1)[i].item()
            scale = max(abs(a), abs(numeric), 1e-8)
            assert abs(a - numeric) / scale < 1e-3, (a, numeric)
            checked += 1
    assert checked == sum(min(10, p.numel()) for p in params)


def test_zero_iterations_is_initialization():
    imgs = [np.random.default_rng(i).uniform(size=(16, 16, 3)) for i in range(3)]
    masks = [np.eye(16, dtype=np.uint8)]
    trained = tiny(iterations=0).fit(imgs, mask_pool=masks).to_checkpoint()
    init = tiny().initialize().to_checkpoint()
    assert trained.iteration == 0
    for name, state in init.state.items():
        for k, v in state.items():
            assert torch.equal(v, trained.state[name][k]), (name, k)


def test_empty_pool_rejected():
    with pytest.raises(InsufficientDataError):
        tiny(iterations=1).fit([np.zeros((16, 16, 3))], mask_pool=[])


def test_finetune_requires_masks(unlabeled_dir):
    model = tiny(resolution=32, iterations=1).initialize()
    with pytest.raises(MissingAnnotationError):
        model.finetune(load_dataset(unlabeled_dir, "unlabeled"))


def test_pretrain_then_finetune(tmp_path, labeled_dir):
    imgs = [np.random.default_rng(i).uniform(size=(32, 32, 3)) for i in range(4)]
    m = np.zeros((32, 32), np.uint8)
    m[8:20, 10:22] = 1
    model = tiny(resolution=32, iterations=3).fit(imgs, mask_pool=[m])
    ckpt = model.to_checkpoint()
    assert ckpt.phase == "pretrain" and ckpt.iteration == 3
    ckpt.save(tmp_path / "pre.pt")
    loaded = Checkpoint.load(tmp_path / "pre.pt", "inpaint")
    assert loaded.config_hash == ckpt.config_hash
    tuned = EdgeConnectInpainter.from_checkpoint(loaded, iterations=2).finetune(load_dataset(labeled_dir))
    assert tuned.phase_ == "finetune" and tuned.iteration_ == 5
    assert all(np.isfinite(v) for e in tuned.history_ for k, v in e.items() if k not in ("phase",))
    # fit always starts over from freshly initialised networks
    refit = tuned.fit(imgs, mask_pool=[m])
    assert refit.phase_ == "pretrain" and refit.iteration_ == 2
    with pytest.raises(InvalidArgumentError):
        EdgeConnectInpainter.from_checkpoint(loaded, width=16)


def test_self_comparison_bound():
    imgs = [np.random.default_rng(i).uniform(size=(16, 16, 3)) for i in range(4)]
    empty = [np.zeros((16, 16), np.uint8)] * 4
    scores = tiny().initialize().evaluate(imgs, empty)
    assert scores["ssim"] == 1.0
    assert scores["psnr"] == 100.0
    assert scores["fid"] < 1e-6


def test_evaluate_checkpoint(labeled_dir):
    ckpt = tiny(resolution=32).initialize().to_checkpoint()
    row = evaluate_checkpoint(ckpt, load_dataset(labeled_dir))
    assert 0 <= row.ssim <= 1 and row.fid >= 0 and row.iteration == 0
    with pytest.raises(InvalidArgumentError):
        evaluate_checkpoint(ckpt, DatasetManifest())


def test_report_rows_increase(tmp_path):
    report = InpaintEvalReport()
    for it in (500, 1000, 1500, 2000, 3000):
        report.append(InpaintEvalRow(it, 0.5, 17.0, 70.0))
    with pytest.raises(InvalidArgumentError):
        report.append(InpaintEvalRow(3000, 0.5, 17.0, 70.0))
    report.write(tmp_path / "r.json")
    assert [r.iteration for r in InpaintEvalReport.read(tmp_path / "r.json").rows] == [500, 1000, 1500, 2000, 3000]


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        InpaintConfig(loss_weights=dict(adversarial=0, l1=0, perceptual=0, style=0, feature_matching=0))
    with pytest.raises(InvalidArgumentError):
        InpaintConfig(resolution=30, n_downsample=2)


def test_single_pair_overfit():
    yy, xx = np.mgrid[0:32, 0:32] / 31
    img = np.stack([xx, yy, 0.5 * np.ones_like(xx)], -1)
    mask = np.zeros((32, 32), np.uint8)
    mask[10:20, 12:22] = 1
    model = EdgeConnectInpainter(resolution=32, width=16, n_downsample=1, n_res_blocks=1, batch_size=1,
                                 iterations=300, learning_rate=1e-3, eval_every=300,
                                 loss_weights=dict(adversarial=0, l1=1, perceptual=0, style=0, feature_matching=0))
    model.initialize()
    model.finetune([img], masks=[mask])
    edges = extract_edges(img).data
    out = model.inpaint([img], [edges], [mask])[0]
    assert np.abs(out - img)[mask == 1].mean() < 0.1
