import numpy as np
import pytest
import torch

from gca.predictor import Predictor


def _predictor(D=3, k=2, seed=0, **kw):
    torch.manual_seed(seed)
    return Predictor(D, k, d_e=8, d_beta=4, hidden=8, d_var=2, **kw).double()


def random_mask(rng, k, D, p=0.5):
    return torch.as_tensor((rng.random((k, D, D)) < p).astype(float))


def test_zero_mask_makes_contribution_constant():
    pred = _predictor()
    zero = torch.zeros(3, 3, dtype=torch.float64)
    a = pred.intra_lag(torch.randn(4, 3, dtype=torch.float64), zero, 1)
    b = pred.intra_lag(torch.randn(4, 3, dtype=torch.float64), zero, 1)
    torch.testing.assert_close(a, b, rtol=0, atol=0)


def test_full_mask_passes_input_to_every_row():
    pred = _predictor()
    seen = {}
    hook = pred.intra[0].register_forward_hook(lambda m, inp, out: seen.setdefault("x", inp[0]))
    z = torch.randn(2, 3, dtype=torch.float64)
    pred.intra_lag(z, torch.ones(3, 3, dtype=torch.float64), 1)
    hook.remove()
    for u in range(3):
        torch.testing.assert_close(seen["x"][:, u, :3], z)


def test_masked_coordinate_has_zero_gradient():
    pred = _predictor()
    A = torch.ones(3, 3, dtype=torch.float64)
    A[1, 2] = 0.0
    z = torch.randn(1, 3, dtype=torch.float64, requires_grad=True)
    e = pred.intra_lag(z, A, 1)
    (g,) = torch.autograd.grad((e[:, 1] ** 2).sum(), z)
    assert g[0, 2].item() == 0.0


def test_inter_lag_is_deterministic_and_uses_beta():
    pred = _predictor()
    contribs = [torch.randn(2, 3, 8, dtype=torch.float64) for _ in range(2)]
    b_src, b_tgt = torch.randn(4, dtype=torch.float64), torch.randn(4, dtype=torch.float64)
    torch.testing.assert_close(pred.inter_lag(contribs, b_src), pred.inter_lag(contribs, b_src), rtol=0, atol=0)
    assert not torch.allclose(pred.inter_lag(contribs, b_src), pred.inter_lag(contribs, b_tgt))
    with pytest.raises(ValueError):
        pred.inter_lag(contribs[:1], b_src)


def test_zero_initialized_head_outputs_zero():
    pred = _predictor(zero_init=True)
    out = pred.predict_one_step(torch.randn(5, 4, 3, dtype=torch.float64), torch.rand(2, 3, 3, dtype=torch.float64), torch.randn(4, dtype=torch.float64))
    assert torch.count_nonzero(out) == 0


def test_rollout_matches_hand_unrolled_oracle():
    pred = _predictor()
    h = torch.randn(2, 4, 3, dtype=torch.float64)
    A = torch.rand(2, 3, 3, dtype=torch.float64)
    beta = torch.randn(4, dtype=torch.float64)
    one = pred.rollout(h, A, beta, 1)
    torch.testing.assert_close(one[:, 0], pred.predict_one_step(h, A, beta), rtol=0, atol=0)
    manual, hist = [], h
    for _ in range(3):
        step = pred.predict_one_step(hist, A, beta)
        manual.append(step)
        hist = torch.cat([hist[:, 1:], step[:, None]], dim=1)
    torch.testing.assert_close(pred.rollout(h, A, beta, 3), torch.stack(manual, 1), rtol=0, atol=0)
    torch.testing.assert_close(pred.rollout(h, A, beta, 3), pred.rollout(h, A, beta, 3), rtol=0, atol=0)
    with pytest.raises(ValueError):
        pred.rollout(h, A, beta, 0)


def mask_leak(instances=50):
    """Largest finite-difference derivative through a masked edge, and how many edges were probed."""
    rng = np.random.default_rng(0)
    eps = 1e-6
    worst, checked = 0.0, 0
    for inst in range(instances):
        D, k = int(rng.integers(2, 5)), int(rng.integers(1, 4))
        pred = _predictor(D, k, seed=inst)
        h = torch.as_tensor(rng.normal(size=(1, k + 1, D)))
        A = random_mask(rng, k, D)
        beta = torch.as_tensor(rng.normal(size=4))
        for j, u, v in np.argwhere(A.numpy() == 0):
            up, down = h.clone(), h.clone()
            up[0, -(j + 1), v] += eps
            down[0, -(j + 1), v] -= eps
            diff = pred.predict_one_step(up, A, beta)[0, u] - pred.predict_one_step(down, A, beta)[0, u]
            worst = max(worst, abs(diff.item()) / (2 * eps))
            checked += 1
    return worst, checked


def test_mask_faithfulness_by_finite_differences():
    worst, checked = mask_leak()
    assert worst <= 1e-6 and checked > 100


def test_gradient_of_rollout_mse():
    pred = _predictor(D=3, k=2)
    h = torch.randn(2, 3, 3, dtype=torch.float64)
    A = torch.rand(2, 3, 3, dtype=torch.float64)
    beta = torch.randn(4, dtype=torch.float64, requires_grad=True)
    target = torch.randn(2, 2, 3, dtype=torch.float64)

    def f():
        return torch.mean((pred.rollout(h, A, beta, 2) - target) ** 2)

    params = [beta, *pred.parameters()]
    grads = torch.autograd.grad(f(), params)
    eps = 1e-5
    for p, g in zip(params, grads):
        flat = p.data.view(-1)
        for idx in range(min(4, p.numel())):
            orig = flat[idx].item()
            flat[idx] = orig + eps
            up = f().item()
            flat[idx] = orig - eps
            down = f().item()
            flat[idx] = orig
            fd = (up - down) / (2 * eps)
            an = g.view(-1)[idx].item()
            assert abs(fd - an) <= 1e-3 * max(1e-3, abs(fd), abs(an))


def test_shape_errors():
    pred = _predictor()
    with pytest.raises(ValueError):
        pred.intra_lag(torch.randn(2, 4, dtype=torch.float64), torch.ones(3, 3, dtype=torch.float64), 1)
    with pytest.raises(ValueError):
        pred.predict_one_step(torch.randn(2, 1, 3, dtype=torch.float64), torch.ones(2, 3, 3, dtype=torch.float64), torch.zeros(4, dtype=torch.float64))
