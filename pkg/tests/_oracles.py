"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np
import torch

from evgen.dataio import Mode, SyntheticPopulationSpec, synth_population
from evgen.scgan.networks import Layer, NetworkSpec

# power levels far apart, so a single Gaussian smears load values into the gaps
THREE_MODES = (
    Mode(0.5, (8.0, 0.7), (4.0, 0.8), (3.3, 0.2)),
    Mode(0.3, (17.5, 1.0), (2.5, 0.6), (7.4, 0.3)),
    Mode(0.2, (12.0, 0.8), (6.0, 1.0), (11.0, 0.4)),
)


def three_mode_population(seed=0, n=600):
    return synth_population(SyntheticPopulationSpec(THREE_MODES, n, seed=seed))

TINY_GENERATOR = NetworkSpec("tiny generator", 88, (
    Layer("dense", 6, out_shape=(6,)),
    Layer("expand", out_shape=(1, 6)),
    Layer("conv1d", 2, out_shape=(2, 6)),
    Layer("conv1d", 1, out_shape=(1, 6)),
    Layer("squeeze", out_shape=(6,)),
    Layer("dense", 12, out_shape=(12,)),
))

TINY_CRITIC = NetworkSpec("tiny critic", 12, (
    Layer("expand", out_shape=(1, 12)),
    Layer("conv1d", 2, out_shape=(2, 12)),
    Layer("maxpool", 2, out_shape=(2, 6)),
    Layer("flatten", out_shape=(12,)),
    Layer("dense", 4, out_shape=(4,)),
    Layer("dense", 1, out_shape=(1,)),
))


def n_params(net) -> int:
    return sum(p.numel() for p in net.parameters())


def central_difference(loss_fn, params, h=1e-3) -> torch.Tensor:
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of ``params``."""
    # loss_fn runs with autograd on: the gradient penalty differentiates w.r.t. its input
    def nudge(flat, i, v):
        with torch.no_grad():
            flat[i] = v

    out = []
    for p in params:
        flat = p.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            nudge(flat, i, orig + h)
            up = loss_fn().item()
            nudge(flat, i, orig - h)
            down = loss_fn().item()
            nudge(flat, i, orig)
            out.append((up - down) / (2 * h))
    return torch.tensor(out, dtype=torch.float64)


def analytic_gradient(loss_fn, params) -> torch.Tensor:
    for p in params:
        p.grad = None
    loss_fn().backward()
    return torch.cat([p.grad.reshape(-1) for p in params]).double()


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    return float((a - b).norm() / b.norm().clamp_min(1e-300))


def kolmogorov_sup(values_a: np.ndarray, values_b: np.ndarray) -> float:
    """Two-sample KS statistic by sorting both samples and scanning every data point."""
    a, b = np.sort(values_a.ravel()), np.sort(values_b.ravel())
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.abs(fa - fb).max())


class ActivationPattern:
    """Records, for every forward pass, which side of each LeakyReLU kink every
    pre-activation lies on and which input wins each max-pool window."""

    def __init__(self, *nets):
        self.record = []
        self.handles = []
        for net in nets:
            for m in net.modules():
                if isinstance(m, torch.nn.LeakyReLU):
                    self.handles.append(m.register_forward_hook(self._relu))
                elif isinstance(m, torch.nn.MaxPool1d):
                    self.handles.append(m.register_forward_hook(self._pool))

    def _relu(self, m, inp, out):
        self.record.append((inp[0] > 0).detach().clone())

    def _pool(self, m, inp, out):
        self.record.append(inp[0].unfold(-1, m.kernel_size, m.stride).argmax(-1).detach().clone())

    def take(self) -> list:
        rec, self.record = self.record, []
        return rec

    def close(self):
        for h in self.handles:
            h.remove()


def kink_crossings(loss_fn, params, nets, h=1e-3) -> int:
    """Number of +-h parameter nudges that move any activation across a kink.

    Central differences only approximate the gradient when this is zero.
    """
    pat = ActivationPattern(*nets)
    try:
        loss_fn()
        base = pat.take()
        crossings = 0
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                for v in (orig + h, orig - h):
                    with torch.no_grad():
                        flat[i] = v
                    loss_fn()
                    now = pat.take()
                    crossings += len(now) != len(base) or any(not torch.equal(a, b) for a, b in zip(now, base))
                with torch.no_grad():
                    flat[i] = orig
        return crossings
    finally:
        pat.close()
