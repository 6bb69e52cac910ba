"""Generator and critic built from ordered layer descriptors.

The default descriptors are the reference CNN layouts. Every descriptor
carries the output shape it must produce (batch dimension omitted), and
construction fails on the first layer that disagrees.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

LATENT_DIM = 80
CODE_DIM = 8
INPUT_DIM = LATENT_DIM + CODE_DIM
CURVE_DIM = 96
LEAK = 0.2


@dataclass(frozen=True)
class Layer:
    kind: str  # dense | conv1d | maxpool | expand | squeeze | flatten
    size: int = 0  # units, filters or pool size
    kernel: int = 5
    activation: bool = True
    out_shape: tuple[int, ...] | None = None


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_dim: int
    layers: tuple[Layer, ...]


GENERATOR_SPEC = NetworkSpec("generator", INPUT_DIM, (
    Layer("dense", 150, out_shape=(150,)),
    Layer("expand", out_shape=(1, 150)),
    Layer("conv1d", 32, out_shape=(32, 150)),
    Layer("conv1d", 16, out_shape=(16, 150)),
    Layer("conv1d", 8, out_shape=(8, 150)),
    Layer("conv1d", 1, out_shape=(1, 150)),
    Layer("squeeze", out_shape=(150,)),
    Layer("dense", 125, out_shape=(125,)),
    Layer("dense", 100, out_shape=(100,)),
    Layer("dense", 96, out_shape=(96,)),
))

CRITIC_SPEC = NetworkSpec("critic", CURVE_DIM, (
    Layer("expand", out_shape=(1, 96)),
    Layer("conv1d", 32, out_shape=(32, 96)),
    Layer("maxpool", 2, out_shape=(32, 48)),
    Layer("conv1d", 16, out_shape=(16, 48)),
    Layer("maxpool", 2, out_shape=(16, 24)),
    Layer("conv1d", 8, out_shape=(8, 24)),
    Layer("flatten", out_shape=(192,)),
    Layer("dense", 50, out_shape=(50,)),
    Layer("dense", 15, out_shape=(15,)),
    Layer("dense", 1, out_shape=(1,)),
))


class Expand(nn.Module):
    def forward(self, x):
        return x.unsqueeze(1)


class Squeeze(nn.Module):
    def forward(self, x):
        return x.squeeze(1)


class Block(nn.Sequential):
    """One descriptor row: the core op followed by its LeakyReLU, if any."""

    def __init__(self, layer: Layer, *mods: nn.Module):
        super().__init__(*mods)
        self.layer = layer


def _make_layer(layer: Layer, shape: tuple[int, ...], where: str) -> tuple[Block, tuple[int, ...]]:
    kind = layer.kind
    if kind == "dense":
        if len(shape) != 1:
            raise ValueError(f"{where}: dense layer needs a flat input, got shape {shape}")
        mods, out = [nn.Linear(shape[0], layer.size)], (layer.size,)
    elif kind == "conv1d":
        if len(shape) != 2:
            raise ValueError(f"{where}: conv1d needs (channels, length) input, got {shape}")
        if layer.kernel % 2 != 1:
            raise ValueError(f"{where}: replicate padding needs an odd kernel, got {layer.kernel}")
        conv = nn.Conv1d(shape[0], layer.size, layer.kernel, padding=layer.kernel // 2, padding_mode="replicate")
        mods, out = [conv], (layer.size, shape[1])
    elif kind == "maxpool":
        if len(shape) != 2:
            raise ValueError(f"{where}: maxpool needs (channels, length) input, got {shape}")
        mods, out = [nn.MaxPool1d(layer.size)], (shape[0], shape[1] // layer.size)
    elif kind == "expand":
        mods, out = [Expand()], (1, *shape)
    elif kind == "squeeze":
        if shape[0] != 1:
            raise ValueError(f"{where}: cannot squeeze {shape[0]} channels")
        mods, out = [Squeeze()], shape[1:]
    elif kind == "flatten":
        n = 1
        for s in shape:
            n *= s
        mods, out = [nn.Flatten()], (n,)
    else:
        raise ValueError(f"{where}: unknown layer kind {kind!r}")
    # shape-only layers carry no activation
    if layer.activation and kind in ("dense", "conv1d"):
        mods.append(nn.LeakyReLU(LEAK))
    if layer.out_shape is not None and tuple(layer.out_shape) != out:
        raise ValueError(f"{where}: produces shape {out}, descriptor expects {tuple(layer.out_shape)}")
    return Block(layer, *mods), out


class Network(nn.Sequential):
    def __init__(self, spec: NetworkSpec):
        shape: tuple[int, ...] = (spec.input_dim,)
        blocks = []
        for i, layer in enumerate(spec.layers):
            block, shape = _make_layer(layer, shape, f"{spec.name} layer {i} ({layer.kind})")
            blocks.append(block)
        super().__init__(*blocks)
        self.spec = spec
        self.output_shape = shape

    def layer_shapes(self, x: torch.Tensor) -> list[tuple[str, tuple[int, ...]]]:
        """Run ``x`` through the network and report each block's output shape."""
        out = []
        for block in self:
            x = block(x)
            out.append((block.layer.kind, tuple(x.shape)))
        return out


def build_generator(spec: NetworkSpec = GENERATOR_SPEC) -> Network:
    net = Network(spec)
    if len(net.output_shape) != 1:
        raise ValueError(f"generator must end in a flat vector, ends in {net.output_shape}")
    return net


def build_critic(spec: NetworkSpec = CRITIC_SPEC) -> Network:
    net = Network(spec)
    if net.output_shape != (1,):
        raise ValueError(f"critic must output one score per sample, outputs {net.output_shape}")
    return net
