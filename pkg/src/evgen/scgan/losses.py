"""Latent codes, WGAN-GP terms and the pairwise similarity constraint."""

from __future__ import annotations

import math

import numpy as np
import torch

from .networks import CODE_DIM, LATENT_DIM

CONTINUOUS = "continuous"
DISCRETE = "discrete"
KINDS = (CONTINUOUS, DISCRETE)
DIST_FLOOR = 1e-8


class NonFiniteLoss(FloatingPointError):
    def __init__(self, term: str, value: float):
        super().__init__(f"non-finite {term}: {value}")
        self.term = term


def _generator(seed=None, generator=None) -> torch.Generator | None:
    if generator is not None:
        return generator
    if seed is None:
        return None
    return torch.Generator().manual_seed(int(seed))


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise ValueError(f"condition kind must be one of {KINDS}, got {kind!r}")


def sample_latent(n: int, kind: str, seed: int | None = None, *, generator: torch.Generator | None = None,
                  n_categories: int = CODE_DIM, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Draw ``(z, c)``: z ~ U(0,1)^80, c ~ U(0,1)^8 or a uniform one-hot.

    Discrete codes pick among the first ``n_categories`` of the 8 slots.
    """
    _check_kind(kind)
    if n < 1:
        raise ValueError("n must be >= 1")
    g = _generator(seed, generator)
    if kind == CONTINUOUS:
        zc = torch.rand(n, LATENT_DIM + CODE_DIM, generator=g, dtype=dtype)
        return zc[:, :LATENT_DIM], zc[:, LATENT_DIM:]
    if not 1 <= n_categories <= CODE_DIM:
        raise ValueError(f"n_categories must lie in [1, {CODE_DIM}]")
    z = torch.rand(n, LATENT_DIM, generator=g, dtype=dtype)
    cat = torch.randint(n_categories, (n,), generator=g)
    return z, one_hot(cat, dtype=dtype)


def one_hot(categories, dtype=torch.float32) -> torch.Tensor:
    cat = torch.as_tensor(categories, dtype=torch.long)
    return torch.nn.functional.one_hot(cat, CODE_DIM).to(dtype)


def _as_2d(c: torch.Tensor) -> torch.Tensor:
    return c[:, None] if c.ndim == 1 else c


def sc_loss(x: torch.Tensor, c: torch.Tensor, kind: str, eps: float = DIST_FLOOR) -> torch.Tensor:
    """Similarity constraint over all ordered pairs i != j of a generated batch.

    With d = max(||x_i - x_j||, eps), continuous codes contribute
    (1 - a) d + a / d where a is |c_i - c_j| averaged over code dimensions;
    one-hot codes contribute s d + (1 - s) / d with s = <c_i, c_j>.
    """
    _check_kind(kind)
    x = torch.as_tensor(x)
    c = _as_2d(torch.as_tensor(c, dtype=x.dtype))
    n = x.shape[0]
    if n < 2:
        raise ValueError("similarity constraint needs a batch of at least 2")
    if c.shape[0] != n:
        raise ValueError(f"x has {n} rows but c has {c.shape[0]}")
    if not (torch.isfinite(x).all() and torch.isfinite(c).all()):
        raise ValueError("similarity constraint got non-finite inputs")

    # exact differences, not the Gram-matrix expansion, which cancels badly for close rows
    d = torch.cdist(x, x, compute_mode="donot_use_mm_for_euclid_dist").clamp_min(eps)
    if kind == CONTINUOUS:
        a = torch.cdist(c, c, p=1) / c.shape[1]
        terms = (1 - a) * d + a / d
    else:
        s = c @ c.T
        terms = s * d + (1 - s) / d
    off = ~torch.eye(n, dtype=torch.bool, device=x.device)
    return terms[off].sum() / (n * (n - 1))


def sc_loss_naive(x, c, kind: str, eps: float = DIST_FLOOR) -> float:
    """Reference double loop over pairs, float64; same contract as :func:`sc_loss`."""
    _check_kind(kind)
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    if isinstance(c, torch.Tensor):
        c = c.detach().cpu().numpy()
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 1:
        c = c[:, None]
    n = x.shape[0]
    if n < 2:
        raise ValueError("similarity constraint needs a batch of at least 2")
    if c.shape[0] != n:
        raise ValueError(f"x has {n} rows but c has {c.shape[0]}")
    if not (np.isfinite(x).all() and np.isfinite(c).all()):
        raise ValueError("similarity constraint got non-finite inputs")
    rows = x.tolist()
    codes = c.tolist()
    m = c.shape[1]
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = math.sqrt(sum((p - q) ** 2 for p, q in zip(rows[i], rows[j])))
            d = max(d, eps)
            if kind == CONTINUOUS:
                a = sum(abs(p - q) for p, q in zip(codes[i], codes[j])) / m
                total += (1 - a) * d + a / d
            else:
                s = sum(p * q for p, q in zip(codes[i], codes[j]))
                total += s * d + (1 - s) / d
    return total / (n * (n - 1))


def gradient_penalty(critic, real: torch.Tensor, fake: torch.Tensor, seed: int | None = None, *,
                     generator: torch.Generator | None = None) -> torch.Tensor:
    """Mean of (||grad D(x_hat)|| - 1)^2 at random interpolates of real and fake."""
    if real.shape != fake.shape:
        raise ValueError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} batches differ in shape")
    g = _generator(seed, generator)
    u = torch.rand(real.shape[0], *([1] * (real.ndim - 1)), generator=g, dtype=real.dtype)
    x_hat = u * real + (1 - u) * fake
    if not x_hat.requires_grad:
        x_hat.requires_grad_(True)
    out = critic(x_hat)
    grad = None
    if out.requires_grad:
        (grad,) = torch.autograd.grad(out.sum(), x_hat, create_graph=True, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(x_hat)
    norm = grad.flatten(1).norm(dim=1)
    return ((norm - 1) ** 2).mean()


def _finite(term: str, value: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NonFiniteLoss(term, float(value.detach()))
    return value


def critic_terms(critic, real, fake, lambda_gp: float, seed: int | None = None, *,
                 generator: torch.Generator | None = None) -> dict[str, torch.Tensor]:
    d_real = _finite("critic score on real", critic(real).mean())
    d_fake = _finite("critic score on fake", critic(fake).mean())
    gp = _finite("gradient penalty", gradient_penalty(critic, real, fake, seed, generator=generator))
    loss = d_fake - d_real + lambda_gp * gp
    return {"loss": loss, "wasserstein": d_real - d_fake, "gp": gp}


def critic_loss(critic, real, fake, lambda_gp: float = 10.0, seed: int | None = None, *,
                generator: torch.Generator | None = None) -> torch.Tensor:
    """mean D(fake) - mean D(real) + lambda_gp * GP."""
    return critic_terms(critic, real, fake, lambda_gp, seed, generator=generator)["loss"]


def generator_terms(critic, fake, c, lambda_sc: float, kind: str) -> dict[str, torch.Tensor]:
    adv = _finite("adversarial term", -critic(fake).mean())
    sc = _finite("similarity constraint", sc_loss(fake, c, kind))
    return {"loss": adv + lambda_sc * sc, "adversarial": adv, "sc": sc}


def generator_loss(critic, fake, c, lambda_sc: float, kind: str) -> torch.Tensor:
    """-mean D(fake) + lambda_sc * SC(fake, c)."""
    return generator_terms(critic, fake, c, lambda_sc, kind)["loss"]
