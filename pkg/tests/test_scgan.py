import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from _oracles import (TINY_CRITIC, TINY_GENERATOR, analytic_gradient, central_difference, kink_crossings, n_params,
                      relative_error)
from evgen.scgan import (CRITIC_SPEC, GENERATOR_SPEC, Layer, NetworkSpec, build_critic, build_generator,
                         critic_loss, generator_loss, gradient_penalty, one_hot, sample_latent, sc_loss,
                         sc_loss_naive)
from evgen.scgan.losses import NonFiniteLoss

GEN_SHAPES = [(150,), (1, 150), (32, 150), (16, 150), (8, 150), (1, 150), (150,), (125,), (100,), (96,)]
CRITIC_SHAPES = [(1, 96), (32, 96), (32, 48), (16, 48), (16, 24), (8, 24), (192,), (50,), (15,), (1,)]


class TestNetworks:
    def test_generator_shapes(self):
        g = build_generator()
        shapes = g.layer_shapes(torch.rand(32, 88))
        assert [s[1:] for _, s in shapes] == GEN_SHAPES
        assert all(s[0] == 32 for _, s in shapes)
        assert g(torch.rand(32, 88)).shape == (32, 96)

    def test_critic_shapes(self):
        d = build_critic()
        shapes = d.layer_shapes(torch.rand(32, 96))
        assert [s[1:] for _, s in shapes] == CRITIC_SHAPES
        assert d(torch.rand(32, 96)).shape == (32, 1)

    def test_conv_layers_use_replicate_padding_and_leaky_relu(self):
        for net in (build_generator(), build_critic()):
            convs = [m for m in net.modules() if isinstance(m, torch.nn.Conv1d)]
            assert convs and all(c.padding_mode == "replicate" and c.kernel_size == (5,) for c in convs)
            acts = [m for m in net.modules() if isinstance(m, torch.nn.LeakyReLU)]
            assert all(a.negative_slope == 0.2 for a in acts)

    def test_descriptor_mismatch_names_layer(self):
        bad = NetworkSpec("critic", 96, (*CRITIC_SPEC.layers[:2], Layer("maxpool", 2, out_shape=(32, 47))))
        with pytest.raises(ValueError, match=r"critic layer 2 \(maxpool\)"):
            build_critic(bad)

    def test_critic_must_emit_scalar(self):
        with pytest.raises(ValueError, match="one score"):
            build_critic(NetworkSpec("c", 96, (Layer("dense", 3),)))

    def test_default_specs_carry_reference_shapes(self):
        assert GENERATOR_SPEC.input_dim == 88 and CRITIC_SPEC.input_dim == 96
        assert [l.out_shape for l in GENERATOR_SPEC.layers] == GEN_SHAPES


class TestLatent:
    def test_continuous_support(self):
        z, c = sample_latent(1000, "continuous", seed=0)
        assert z.shape == (1000, 80) and c.shape == (1000, 8)
        assert z.min() >= 0 and z.max() <= 1 and c.min() >= 0 and c.max() <= 1

    def test_discrete_one_hot(self):
        z, c = sample_latent(500, "discrete", seed=1)
        assert z.min() >= 0 and z.max() <= 1
        assert torch.equal(c.sum(1), torch.ones(500))
        assert set(c.unique().tolist()) == {0.0, 1.0}

    def test_category_frequencies(self):
        crit = 18.475  # chi-square, 7 dof, 1% upper tail
        assert crit == pytest.approx(chi2.ppf(0.99, 7), abs=1e-3)
        _, c = sample_latent(80000, "discrete", seed=2)
        obs = c.sum(0).numpy()
        assert ((obs - 10000) ** 2 / 10000).sum() < crit

    def test_restricted_categories(self):
        _, c = sample_latent(2000, "discrete", seed=3, n_categories=4)
        assert c[:, 4:].sum() == 0 and (c[:, :4].sum(0) > 0).all()

    def test_deterministic(self):
        a = sample_latent(10, "continuous", seed=5)
        b = sample_latent(10, "continuous", seed=5)
        assert all(torch.equal(x, y) for x, y in zip(a, b))


class TestSimilarityConstraint:
    def test_coincident_pair_is_floor(self):
        x = torch.ones(2, 96, dtype=torch.float64)
        c = torch.full((2, 8), 0.3, dtype=torch.float64)
        assert float(sc_loss(x, c, "continuous")) == pytest.approx(1e-8, rel=1e-12)
        assert sc_loss_naive(x, c, "continuous") == pytest.approx(1e-8, rel=1e-12)

    def test_discrete_pair_distance_two(self):
        x = torch.zeros(2, 96, dtype=torch.float64)
        x[1, 0] = 2.0
        c = one_hot([0, 3], dtype=torch.float64)
        assert float(sc_loss(x, c, "discrete")) == pytest.approx(0.5, abs=1e-15)
        assert sc_loss_naive(x, c, "discrete") == pytest.approx(0.5, abs=1e-15)

    def test_scalar_code_formula(self):
        # one pair with |dc| = 0.25 and distance 3: (0.75 * 3 + 0.25 / 3)
        x = torch.zeros(2, 96, dtype=torch.float64)
        x[1, :9] = 1.0
        c = torch.tensor([0.5, 0.75], dtype=torch.float64)
        assert float(sc_loss(x, c, "continuous")) == pytest.approx(0.75 * 3 + 0.25 / 3, rel=1e-14)

    def test_per_dimension_average(self):
        x = torch.zeros(2, 96, dtype=torch.float64)
        x[1, 0] = 2.0
        c = torch.tensor([[0.0, 0.0], [1.0, 0.0]], dtype=torch.float64)
        # dimension 0: 0 * 2 + 1 / 2; dimension 1: 1 * 2 + 0; mean 1.25
        assert float(sc_loss(x, c, "continuous")) == pytest.approx(1.25, rel=1e-14)

    @pytest.mark.parametrize("kind", ["continuous", "discrete"])
    @pytest.mark.parametrize("n", [2, 3, 8, 17])
    def test_matches_naive(self, kind, n):
        g = torch.Generator().manual_seed(n)
        x = torch.rand(n, 96, generator=g, dtype=torch.float64)
        _, c = sample_latent(n, kind, generator=g, dtype=torch.float64)
        assert float(sc_loss(x, c, kind)) == pytest.approx(sc_loss_naive(x, c, kind), rel=1e-6)

    def test_swap_symmetric(self):
        x = torch.rand(2, 96, dtype=torch.float64)
        c = torch.rand(2, 8, dtype=torch.float64)
        assert sc_loss_naive(x, c, "continuous") == sc_loss_naive(x.flip(0), c.flip(0), "continuous")

    @pytest.mark.parametrize("kind", ["continuous", "discrete"])
    def test_scales_linearly_with_equal_codes(self, kind):
        x = torch.rand(6, 96, dtype=torch.float64)
        c = (torch.full((6, 8), 0.4) if kind == "continuous" else one_hot([2] * 6)).double()
        base = sc_loss_naive(x, c, kind)
        assert sc_loss_naive(3.5 * x, c, kind) == pytest.approx(3.5 * base, rel=1e-12)
        assert float(sc_loss(3.5 * x, c, kind)) == pytest.approx(3.5 * base, rel=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), n=st.integers(2, 20), kind=st.sampled_from(["continuous", "discrete"]))
    def test_permutation_invariant(self, seed, n, kind):
        g = torch.Generator().manual_seed(seed)
        x = torch.rand(n, 96, generator=g, dtype=torch.float64)
        _, c = sample_latent(n, kind, generator=g, dtype=torch.float64)
        perm = torch.randperm(n, generator=g)
        assert float(sc_loss(x[perm], c[perm], kind)) == pytest.approx(float(sc_loss(x, c, kind)), rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            sc_loss(torch.rand(1, 96), torch.rand(1, 8), "continuous")
        with pytest.raises(ValueError):
            sc_loss_naive(torch.rand(1, 96), torch.rand(1, 8), "continuous")
        x = torch.rand(3, 96)
        x[0, 0] = float("nan")
        with pytest.raises(ValueError, match="non-finite"):
            sc_loss(x, torch.rand(3, 8), "continuous")
        with pytest.raises(ValueError, match="non-finite"):
            sc_loss_naive(x, torch.rand(3, 8), "continuous")
        with pytest.raises(ValueError, match="kind"):
            sc_loss(torch.rand(3, 96), torch.rand(3, 8), "ordinal")

    def test_differentiable_at_coincident_samples(self):
        x = torch.ones(4, 96, dtype=torch.float64, requires_grad=True)
        sc_loss(x, torch.rand(4, 8, dtype=torch.float64), "continuous").backward()
        assert torch.isfinite(x.grad).all()


def _batches(n=16, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(n, 96, generator=g, dtype=torch.float64), torch.rand(n, 96, generator=g, dtype=torch.float64)


class TestGradientPenalty:
    def test_unit_gradient_linear_critic(self):
        w = torch.randn(96, dtype=torch.float64)
        w = w / w.norm()
        real, fake = _batches()
        assert float(gradient_penalty(lambda x: (x @ w)[:, None], real, fake, seed=0)) <= 1e-10

    def test_zero_critic(self):
        real, fake = _batches()
        zero = lambda x: torch.zeros(x.shape[0], 1, dtype=x.dtype)
        assert float(gradient_penalty(zero, real, fake, seed=0)) == pytest.approx(1.0, abs=1e-10)
        assert float(gradient_penalty(lambda x: 0 * x.sum(1, keepdim=True), real, fake, seed=0)) == 1.0

    def test_slope_two_sum_critic(self):
        real, fake = _batches()
        gp = float(gradient_penalty(lambda x: 2 * x.sum(1, keepdim=True), real, fake, seed=0))
        assert gp == pytest.approx((2 * math.sqrt(96) - 1) ** 2, abs=1e-5)

    def test_interpolates_between_batches(self):
        # D(x) = 0.5 * |x|^2 has gradient x, so the penalty exposes the interpolate itself
        real = torch.ones(4, 96, dtype=torch.float64)
        fake = torch.zeros(4, 96, dtype=torch.float64)
        gp = gradient_penalty(lambda x: 0.5 * (x ** 2).sum(1, keepdim=True), real, fake, seed=7).item()
        u = torch.rand(4, 1, generator=torch.Generator().manual_seed(7), dtype=torch.float64)
        assert gp == pytest.approx(float(((u.squeeze() * math.sqrt(96) - 1) ** 2).mean()), rel=1e-12)

    def test_deterministic(self):
        d = build_critic().double()
        real, fake = _batches()
        assert gradient_penalty(d, real, fake, seed=3).item() == gradient_penalty(d, real, fake, seed=3).item()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            gradient_penalty(lambda x: x.sum(1, keepdim=True), torch.rand(3, 96), torch.rand(4, 96))


class TestLosses:
    def test_zero_critic(self):
        real, fake = _batches()
        zero = lambda x: 0 * x.sum(1, keepdim=True)
        assert float(critic_loss(zero, real, fake, lambda_gp=0.0, seed=0)) == 0.0
        assert float(critic_loss(zero, real, fake, lambda_gp=10.0, seed=0)) == pytest.approx(10.0, abs=1e-12)

    def test_constant_margin(self):
        real = torch.ones(8, 96, dtype=torch.float64)
        fake = torch.zeros(8, 96, dtype=torch.float64)
        m = 0.7
        critic = lambda x: m * x.mean(1, keepdim=True)
        assert float(critic_loss(critic, real, fake, lambda_gp=0.0, seed=0)) == pytest.approx(-m, abs=1e-15)

    def test_generator_loss_composition(self):
        torch.manual_seed(0)
        d = build_critic().double()
        fake, _ = _batches(12, seed=4)
        _, c = sample_latent(12, "continuous", seed=4, dtype=torch.float64)
        adv = -d(fake).mean().item()
        sc = sc_loss_naive(fake, c, "continuous")
        assert generator_loss(d, fake, c, 0.0, "continuous").item() == pytest.approx(adv, rel=1e-12)
        assert generator_loss(d, fake, c, 1.0, "continuous").item() == pytest.approx(adv + sc, rel=1e-9)
        g1 = generator_loss(d, fake, c, 0.3, "continuous").item() - adv
        g2 = generator_loss(d, fake, c, 0.6, "continuous").item() - adv
        assert g2 == pytest.approx(2 * g1, rel=1e-9)

    def test_non_finite_attributed(self):
        real, fake = _batches()
        with pytest.raises(NonFiniteLoss, match="critic score on real"):
            critic_loss(lambda x: torch.where(x[:, :1] > 0.5, math.inf, 0.0) + 0 * x[:, :1], real, fake, 0.0, seed=0)


class TestGradientCheck:
    # (init seed, batch) pairs whose +-1e-3 nudges never cross a LeakyReLU or
    # max-pool kink; each test re-asserts that before comparing
    CASES = [(11, 4), (11, 8)]

    def _setup(self, seed, batch, kind="continuous"):
        torch.manual_seed(seed)
        g = build_generator(TINY_GENERATOR).double()
        d = build_critic(TINY_CRITIC).double()
        assert n_params(g) <= 1000 and n_params(d) <= 1000
        gen = torch.Generator().manual_seed(seed)
        real = torch.rand(batch, 12, generator=gen, dtype=torch.float64)
        z, c = sample_latent(batch, kind, generator=gen, dtype=torch.float64)
        return g, d, real, z, c

    @pytest.mark.parametrize("seed,batch", CASES)
    def test_critic_loss(self, seed, batch):
        g, d, real, z, c = self._setup(seed, batch)
        fake = g(torch.cat([z, c], 1)).detach()
        fn = lambda: critic_loss(d, real, fake, lambda_gp=10.0, seed=99)
        params = list(d.parameters())
        assert kink_crossings(fn, params, [d]) == 0
        assert relative_error(analytic_gradient(fn, params), central_difference(fn, params)) < 1e-4

    @pytest.mark.parametrize("seed,batch", CASES)
    @pytest.mark.parametrize("kind", ["continuous", "discrete"])
    def test_generator_loss(self, seed, batch, kind):
        g, d, real, z, c = self._setup(seed, batch, kind)
        fn = lambda: generator_loss(d, g(torch.cat([z, c], 1)), c, 0.1, kind)
        params = list(g.parameters())
        assert kink_crossings(fn, params, [g, d]) == 0
        assert relative_error(analytic_gradient(fn, params), central_difference(fn, params)) < 1e-4

    def test_residual_is_truncation_error(self):
        # kink-free but curved enough that h=1e-3 leaves ~1e-4; the gap must shrink like h^2
        g, d, real, z, c = self._setup(10, 4, "discrete")
        fn = lambda: generator_loss(d, g(torch.cat([z, c], 1)), c, 0.5, "discrete")
        params = list(g.parameters())
        exact = analytic_gradient(fn, params)
        e3 = relative_error(exact, central_difference(fn, params, h=1e-3))
        e4 = relative_error(exact, central_difference(fn, params, h=1e-4))
        assert e4 < e3 / 30

