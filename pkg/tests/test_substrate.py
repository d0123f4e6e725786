import math

import pytest
import torch

from srsnet.substrate import ParamStore, detach, finite_diff_grad, gather


class TestDetach:
    def test_value_preserved(self):
        x = torch.tensor([2.0], requires_grad=True)
        out = detach(x)
        assert out.item() == 2.0
        assert not out.requires_grad

    def test_idempotent(self):
        x = torch.randn(5, requires_grad=True)
        once = detach(x)
        twice = detach(once)
        assert torch.equal(once, twice)
        assert not twice.requires_grad

    def test_product_with_detached_factor(self):
        # reverse mode sees only the tracked factor: d(x * const)/dx = const
        x = torch.tensor(3.0, requires_grad=True)
        (x * detach(x)).backward()
        assert x.grad.item() == pytest.approx(3.0, abs=1e-7)
        # finite differences with the detached copy held constant agree
        const = 3.0
        fd = finite_diff_grad(lambda v: v * const, torch.tensor(3.0, dtype=torch.float64))
        assert fd.item() == pytest.approx(3.0, abs=1e-6)

    def test_no_gradient_through_detached_branch(self):
        x = torch.tensor([1.5, -0.5], requires_grad=True)
        # only the direct path contributes; the detached branch adds zero
        (x + 2.0 * detach(x)).sum().backward()
        assert torch.equal(x.grad, torch.ones(2))


class TestGather:
    def test_direct_indexing(self):
        x = torch.tensor([10.0, 20.0, 30.0])
        assert gather(x, [2, 0], axis=0).tolist() == [30.0, 10.0]

    def test_identity_permutation(self):
        x = torch.randn(7, 3)
        assert torch.equal(gather(x, list(range(7)), axis=0), x)

    def test_backward_scatters_additively(self):
        x = torch.tensor([1.0, 2.0, 3.0], requires_grad=True)
        gather(x, [1, 1], axis=0).sum().backward()
        assert x.grad.tolist() == [0.0, 2.0, 0.0]

    def test_out_of_bounds_named(self):
        x = torch.zeros(3)
        with pytest.raises(IndexError, match="index 3 .* axis 0 .* length 3"):
            gather(x, [3], axis=0)
        with pytest.raises(IndexError, match="index -1"):
            gather(x, [-1], axis=0)

    def test_inner_axis(self):
        x = torch.arange(12.0).reshape(3, 4)
        out = gather(x, [3, 1], axis=1)
        assert out.tolist() == [[3.0, 1.0], [7.0, 5.0], [11.0, 9.0]]


class TestFiniteDiff:
    def test_square(self):
        fd = finite_diff_grad(lambda v: (v**2).sum(), torch.tensor([3.0], dtype=torch.float64))
        assert fd.item() == pytest.approx(6.0, abs=1e-6)

    def test_linear(self):
        x = torch.randn(6, dtype=torch.float64)
        fd = finite_diff_grad(lambda v: v.sum(), x)
        assert torch.allclose(fd, torch.ones(6, dtype=torch.float64), atol=1e-8)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            finite_diff_grad(lambda v: float("nan"), torch.tensor([1.0]))

    def test_rejects_bad_eps(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda v: v.sum(), torch.ones(2), eps=0.0)


def test_smooth_composition_matches_finite_differences():
    # linear layers + elementwise ops + reductions, float64, 1e-3 relative
    torch.manual_seed(7)
    w1 = torch.randn(5, 4, dtype=torch.float64)
    w2 = torch.randn(3, 5, dtype=torch.float64)

    def f(v):
        h = torch.tanh(v @ w1.T)
        return (torch.sigmoid(h @ w2.T) ** 2).sum()

    x = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
    f(x).backward()
    fd = finite_diff_grad(lambda v: f(v), x.detach(), eps=1e-5)
    rel = (x.grad - fd).abs() / (fd.abs() + 1e-12)
    assert float(rel.max()) < 1e-3


def test_gradient_accumulation_is_additive():
    x = torch.randn(4, requires_grad=True)
    (x**2).sum().backward()
    first = x.grad.clone()
    (x**2).sum().backward()
    assert torch.allclose(x.grad, 2.0 * first)


class TestParamStore:
    def test_duplicate_names_rejected(self):
        store = ParamStore()
        store.add("w", torch.zeros(2))
        with pytest.raises(ValueError, match="duplicate"):
            store.add("w", torch.zeros(3))

    def test_shape_immutable_on_load(self):
        store = ParamStore()
        store.add("w", torch.zeros(2, 3))
        with pytest.raises(ValueError, match="shape mismatch"):
            store.load_("w", torch.zeros(3, 2))
        store.load_("w", torch.ones(2, 3))
        assert torch.equal(store["w"], torch.ones(2, 3))

    def test_from_module(self):
        lin = torch.nn.Linear(3, 2)
        store = ParamStore.from_module(lin)
        assert set(store.names()) == {"weight", "bias"}
        assert store.step_count == 0
