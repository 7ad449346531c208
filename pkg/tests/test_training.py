import math

import numpy as np
import pytest

from sinco import tensor as T
from sinco.errors import ConfigError, ContractError, ShapeError
from sinco.imageio import ImagePlane, MaskPlane, make_coordinate_grid, synth_phantom
from sinco.nets import ARCH_PEMLP, ARCH_SIREN, init_params, make_inr, make_segnet, unet_forward
from sinco.tensor import Tensor, backward_sweep, finite_difference_check, zero_grads
from sinco.training import (
    AdamState,
    LossTrace,
    SegDataset,
    TrainConfig,
    adam_step,
    bce_loss,
    compress_loss,
    segmenter_dataset_bce,
    sinco_loss,
    soft_dice_loss,
    train_compress,
    train_segmenter,
)


def image_tensor(arr):
    a = np.asarray(arr, dtype=np.float32)
    return Tensor(a.reshape(1, *a.shape))


def test_compress_loss_zero_on_equal():
    x = image_tensor(np.full((4, 4), 0.3))
    assert compress_loss(x, x).item() == 0.0


def test_compress_loss_uniform_offset():
    x = image_tensor(np.full((4, 4), 0.3))
    y = image_tensor(np.full((4, 4), 0.4))
    assert compress_loss(y, x).item() == pytest.approx(0.01, rel=1e-5)


def test_compress_loss_gradient_formula():
    rng = np.random.default_rng(0)
    xhat = Tensor(rng.uniform(0, 1, size=(1, 4, 4)).astype(np.float32), requires_grad=True)
    x = Tensor(rng.uniform(0, 1, size=(1, 4, 4)).astype(np.float32))
    backward_sweep(compress_loss(xhat, x))
    expected = 2.0 * (xhat.data - x.data) / 16.0
    assert np.allclose(xhat.grad, expected, rtol=1e-6)


def test_compress_loss_gradient_vs_finite_differences():
    rng = np.random.default_rng(1)
    xhat = Tensor(rng.uniform(0, 1, size=(3, 3)).astype(np.float64), requires_grad=True)
    x = Tensor(rng.uniform(0, 1, size=(3, 3)).astype(np.float64))
    assert finite_difference_check(lambda: compress_loss(xhat, x), [xhat], step=1e-5) < 1e-3


def test_soft_dice_perfect_agreement():
    s = image_tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert soft_dice_loss(s, s).item() < 1e-6


def test_soft_dice_disjoint_supports():
    a = image_tensor(np.array([[1.0, 0.0], [0.0, 0.0]]))
    b = image_tensor(np.array([[0.0, 1.0], [0.0, 0.0]]))
    assert soft_dice_loss(a, b).item() == pytest.approx(1.0, abs=1e-5)


def test_soft_dice_half_uniform():
    shat = image_tensor(np.full((4, 4), 0.5))
    s = np.zeros((4, 4), dtype=np.float32)
    s[:2] = 1.0
    assert soft_dice_loss(shat, image_tensor(s)).item() == pytest.approx(0.5, abs=1e-5)


def test_bce_half_probability_is_log_two():
    p = image_tensor(np.full((3, 3), 0.5))
    s = image_tensor((np.arange(9).reshape(3, 3) % 2).astype(np.float32))
    assert bce_loss(p, s).item() == pytest.approx(math.log(2.0), rel=1e-5)


def test_bce_exact_match_is_tiny():
    s = image_tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert bce_loss(s, s).item() < 2e-7


def test_bce_point_nine_contribution():
    p = image_tensor(np.full((2, 2), 0.9))
    s = image_tensor(np.ones((2, 2), dtype=np.float32))
    assert bce_loss(p, s).item() == pytest.approx(-math.log(0.9), rel=1e-5)


def test_sinco_lambda_zero_is_bitwise_compress():
    rng = np.random.default_rng(2)
    for _ in range(20):
        xhat = image_tensor(rng.uniform(0, 1, size=(8, 8)))
        x = image_tensor(rng.uniform(0, 1, size=(8, 8)))
        total, c, r = sinco_loss(xhat, x, None, None, lam=0.0)
        assert total.data.tobytes() == compress_loss(xhat, x).data.tobytes()
        assert total is c
        assert r.item() == 0.0


def test_sinco_requires_frozen_segmenter():
    g = make_segnet(levels=1, base_channels=2)
    init_params(g, seed=0)
    x = image_tensor(np.random.default_rng(3).uniform(0, 1, size=(8, 8)))
    s = image_tensor(np.zeros((8, 8), dtype=np.float32))
    with pytest.raises(ContractError):
        sinco_loss(x, x, g, s, lam=1.0)


def test_sinco_missing_segmenter_is_config_error():
    x = image_tensor(np.zeros((8, 8), dtype=np.float32))
    with pytest.raises(ConfigError):
        sinco_loss(x, x, None, None, lam=1.0)


def test_sinco_total_is_sum_of_terms():
    g = make_segnet(levels=1, base_channels=2)
    init_params(g, seed=1)
    g.freeze()
    rng = np.random.default_rng(4)
    xhat = image_tensor(rng.uniform(0, 1, size=(8, 8)))
    x = image_tensor(rng.uniform(0, 1, size=(8, 8)))
    s = image_tensor((rng.uniform(0, 1, size=(8, 8)) > 0.8).astype(np.float32))
    total, c, r = sinco_loss(xhat, x, g, s, lam=1.0)
    assert total.item() == pytest.approx(c.item() + r.item(), rel=1e-6)


def test_sinco_regularizer_reaches_inr_but_not_segmenter():
    g = make_segnet(levels=1, base_channels=4)
    init_params(g, seed=2)
    g.freeze()
    m = make_inr(ARCH_SIREN, depth=2, width=8)
    init_params(m, seed=3)
    img, mask = synth_phantom(0, 32, 32)
    grid = make_coordinate_grid(32, 32)
    x_t = image_tensor(img.pixels)
    s_t = image_tensor(mask.values)

    def grads_for(lam):
        zero_grads(m.params)
        from sinco.nets import siren_forward

        xhat = T.reshape(siren_forward(m, grid), (1, 32, 32))
        total, _, _ = sinco_loss(xhat, x_t, g, s_t, lam=lam)
        backward_sweep(total)
        return [p.grad.copy() for p in m.params]

    g0 = grads_for(0.0)
    g1 = grads_for(1.0)
    diff = sum(float(np.abs(a - b).sum()) for a, b in zip(g0, g1))
    assert diff > 0.0
    assert all(p.grad is None for p in g.params)


def test_adam_zero_gradient_is_identity():
    p = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
    st = AdamState([p])
    before = p.data.copy()
    adam_step([p], [np.zeros(2, dtype=np.float32)], st, lr=0.1)
    assert np.array_equal(p.data, before)
    assert st.t == 1


def test_adam_first_step_magnitude():
    g = np.array([0.3, -4.0], dtype=np.float32)
    p = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
    st = AdamState([p])
    lr = 0.01
    adam_step([p], [g], st, lr=lr, eps=1e-8)
    expected = -lr * g / (np.abs(g) + 1e-8)
    assert np.allclose(p.data, expected, rtol=1e-5)


def test_adam_trajectories_deterministic():
    def run():
        rng = np.random.default_rng(5)
        p = Tensor(rng.standard_normal(4).astype(np.float32), requires_grad=True)
        st = AdamState([p])
        for _ in range(25):
            zero_grads([p])
            backward_sweep(T.reduce_sum(T.square(p)))
            adam_step([p], [p.grad], st, lr=0.05)
        return p.data.copy()

    assert np.array_equal(run(), run())


def test_train_constant_image_siren():
    img = ImagePlane(np.full((16, 16), 0.7, dtype=np.float32))
    m = make_inr(ARCH_SIREN, depth=2, width=16)
    init_params(m, seed=0)
    cfg = TrainConfig(lam=0.0, lr=1e-3, epochs=500, seed=0, log_every=100)
    m, trace = train_compress(img, None, None, m, cfg)
    assert trace.final[2] < 1e-4


def test_train_constant_image_pemlp():
    # converges slower than SIREN on a constant; 1500 full-grid steps suffice
    img = ImagePlane(np.full((16, 16), 0.7, dtype=np.float32))
    m = make_inr(ARCH_PEMLP, depth=2, width=16, l_f=4)
    init_params(m, seed=0)
    cfg = TrainConfig(lam=0.0, lr=1e-3, epochs=1500, seed=0, log_every=100)
    m, trace = train_compress(img, None, None, m, cfg)
    assert trace.final[2] < 1e-4


def test_train_compress_deterministic():
    img, _ = synth_phantom(1, 32, 32)

    def run():
        m = make_inr(ARCH_SIREN, depth=2, width=8)
        init_params(m, seed=9)
        cfg = TrainConfig(lam=0.0, lr=1e-3, epochs=40, seed=9, log_every=10)
        m, _ = train_compress(img, None, None, m, cfg)
        return np.concatenate([p.data.reshape(-1) for p in m.params])

    assert np.array_equal(run(), run())


def test_train_compress_requires_mask_for_positive_lambda():
    img, _ = synth_phantom(2, 32, 32)
    m = make_inr(ARCH_SIREN, depth=2, width=8)
    with pytest.raises(ConfigError):
        train_compress(img, None, None, m, TrainConfig(lam=1.0, epochs=1))


def test_final_compress_no_worse_than_initial():
    img, _ = synth_phantom(3, 32, 32)
    m = make_inr(ARCH_SIREN, depth=2, width=12)
    init_params(m, seed=4)
    cfg = TrainConfig(lam=0.0, lr=1e-3, epochs=300, seed=4, log_every=1)
    m, trace = train_compress(img, None, None, m, cfg)
    assert trace.rows[-1][2] <= trace.rows[0][2]


def test_loss_trace_monotone_and_csv():
    tr = LossTrace()
    tr.add(10, 1.0, 0.5, 0.5)
    tr.add(20, 0.9, 0.5, 0.4)
    with pytest.raises(ContractError):
        tr.add(20, 0.8, 0.4, 0.4)
    csv = tr.to_csv()
    assert csv.splitlines()[0] == "epoch,total,compress,regularize"
    assert csv.splitlines()[1].startswith("10,")


def test_train_segmenter_overfits_single_pair():
    img, mask = synth_phantom(5, 32, 32)
    ds = SegDataset([(img, mask)])
    g = make_segnet(levels=2, base_channels=4)
    init_params(g, seed=0)
    cfg = TrainConfig(lam=0.0, lr=3e-3, epochs=150, seed=0, batch_size=1)
    g = train_segmenter(ds, g, cfg)
    assert segmenter_dataset_bce(ds, g) < 0.05


def test_train_segmenter_rejects_empty_and_oversized_batch():
    with pytest.raises(ConfigError):
        train_segmenter(SegDataset([]), make_segnet(1, 2), TrainConfig(epochs=1))
    img, mask = synth_phantom(6, 32, 32)
    with pytest.raises(ConfigError):
        train_segmenter(SegDataset([(img, mask)]), make_segnet(1, 2), TrainConfig(epochs=1, batch_size=8))


def test_seg_dataset_validates_pairs():
    img, _ = synth_phantom(7, 32, 32)
    bad_mask = MaskPlane(np.zeros((16, 16), dtype=np.float32))
    with pytest.raises(ShapeError):
        SegDataset([(img, bad_mask)])
    soft = MaskPlane(np.full((32, 32), 0.5, dtype=np.float32))
    with pytest.raises(ConfigError):
        SegDataset([(img, soft)])
