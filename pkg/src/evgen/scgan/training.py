"""SC-WGAN-GP training loop, conditioned generation and condition sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from ..dataio import LoadCurveDataset, NormalizationStats
from ..evaluation import empirical_cdf, ks_distance, summary_stats
from .losses import (CONTINUOUS, KINDS, NonFiniteLoss, critic_terms, generator_terms,
                     sample_latent)
from .networks import (CODE_DIM, CRITIC_SPEC, GENERATOR_SPEC, INPUT_DIM, LATENT_DIM, Layer,
                       Network, NetworkSpec, build_critic, build_generator)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
TRACE_COLUMNS = ["epoch", "critic_loss", "wasserstein_estimate", "gp_term", "sc_term", "lr"]


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, term: str, last_checkpoint: Path | None):
        super().__init__(f"training diverged at epoch {epoch} ({term}); last checkpoint: {last_checkpoint}")
        self.epoch = epoch
        self.last_checkpoint = last_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 256
    condition_kind: str = CONTINUOUS
    n_categories: int = CODE_DIM
    lambda_gp: float = 10.0
    lambda_sc: float = 0.1
    n_critic: int = 5
    lr: float = 1e-4
    betas: tuple[float, float] = (0.5, 0.9)
    lr_factor: float = 0.5
    lr_patience: int = 50
    checkpoint_every: int = 50
    ks_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.condition_kind not in KINDS:
            raise ValueError(f"condition_kind must be one of {KINDS}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for the pairwise constraint")
        if min(self.lambda_gp, self.lambda_sc) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epochs < 1 or self.n_critic < 1:
            raise ValueError("epochs and n_critic must be >= 1")
        object.__setattr__(self, "betas", tuple(self.betas))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class GanModel:
    generator: Network
    critic: Network
    condition_kind: str
    normalization: NormalizationStats
    config: TrainConfig
    trace: list[dict] = field(default_factory=list)
    epochs_trained: int = 0

    @property
    def n_categories(self) -> int:
        return self.config.n_categories


# ---------------------------------------------------------------- persistence

def _spec_to_dict(spec: NetworkSpec) -> dict:
    return {"name": spec.name, "input_dim": spec.input_dim,
            "layers": [{**asdict(l), "out_shape": list(l.out_shape) if l.out_shape else None} for l in spec.layers]}


def _spec_from_dict(d: dict) -> NetworkSpec:
    layers = tuple(Layer(**{**l, "out_shape": tuple(l["out_shape"]) if l["out_shape"] else None})
                   for l in d["layers"])
    return NetworkSpec(d["name"], d["input_dim"], layers)


def _state_to_dict(net: torch.nn.Module) -> dict:
    return {k: {"shape": list(v.shape), "data": v.detach().double().flatten().tolist()}
            for k, v in net.state_dict().items()}


def _state_from_dict(net: torch.nn.Module, d: dict) -> None:
    ref = net.state_dict()
    state = {k: torch.tensor(v["data"], dtype=ref[k].dtype).reshape(v["shape"]) for k, v in d.items()}
    net.load_state_dict(state)


def save_model(path: str | Path, model: GanModel) -> Path:
    """Write a JSON checkpoint with both networks, their layouts and the config echo."""
    doc = {
        "format": "evgen-gan",
        "version": CHECKPOINT_VERSION,
        "condition_kind": model.condition_kind,
        "normalization": asdict(model.normalization),
        "config": asdict(model.config),
        "epoch": model.epochs_trained,
        "generator_spec": _spec_to_dict(model.generator.spec),
        "critic_spec": _spec_to_dict(model.critic.spec),
        "generator": _state_to_dict(model.generator),
        "critic": _state_to_dict(model.critic),
    }
    path = Path(path)
    path.write_text(json.dumps(doc) + "\n", encoding="utf-8")
    return path


def load_model(path: str | Path) -> GanModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "evgen-gan":
        raise ValueError(f"{path} is not a GAN checkpoint")
    if doc["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc['version']}")
    gen = build_generator(_spec_from_dict(doc["generator_spec"]))
    crit = build_critic(_spec_from_dict(doc["critic_spec"]))
    _state_from_dict(gen, doc["generator"])
    _state_from_dict(crit, doc["critic"])
    return GanModel(gen, crit, doc["condition_kind"], NormalizationStats(**doc["normalization"]),
                    TrainConfig.from_dict(doc["config"]), epochs_trained=doc["epoch"])


def write_trace(path: str | Path, trace: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in trace:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in TRACE_COLUMNS})


# ---------------------------------------------------------------- training

def _fake(generator, z, c):
    return generator(torch.cat([z, c], dim=1))


def train(train_set: LoadCurveDataset, cfg: TrainConfig = TrainConfig(), out_dir: str | Path | None = None,
          generator_spec: NetworkSpec = GENERATOR_SPEC, critic_spec: NetworkSpec = CRITIC_SPEC) -> GanModel:
    """Alternate ``n_critic`` critic updates with one generator update.

    An epoch is one shuffled pass of the training curves through the critic in
    full batches; the critic-step counter carries across epochs, so the
    generator is updated every ``n_critic`` batches. Checkpoints go to
    ``out_dir`` every ``checkpoint_every`` epochs, plus ``best.json`` for the
    lowest KS distance seen at those points and ``final.json``.
    """
    if not train_set.is_normalized:
        raise ValueError("train expects a normalized dataset")
    n = len(train_set)
    if n < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} curves, have {n}")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.seed)
    generator = build_generator(generator_spec)
    critic = build_critic(critic_spec)
    if generator.output_shape != (train_set.curves.shape[1],):
        raise ValueError(f"generator emits {generator.output_shape}, data has {train_set.curves.shape[1]} slots")
    latent_g = torch.Generator().manual_seed(cfg.seed + 1)
    gp_g = torch.Generator().manual_seed(cfg.seed + 2)
    shuffle_rng = np.random.default_rng(cfg.seed + 3)

    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.lr, betas=cfg.betas)
    opt_d = torch.optim.Adam(critic.parameters(), lr=cfg.lr, betas=cfg.betas)
    sched = [torch.optim.lr_scheduler.ReduceLROnPlateau(o, mode="min", factor=cfg.lr_factor,
                                                        patience=cfg.lr_patience) for o in (opt_g, opt_d)]
    data = torch.tensor(train_set.curves, dtype=torch.float32)
    model = GanModel(generator, critic, cfg.condition_kind, train_set.normalization, cfg)
    real_cdf = empirical_cdf(train_set.curves)
    best_ks = math.inf
    last_ckpt: Path | None = None
    n_batches = n // cfg.batch_size
    step = 0

    for epoch in range(1, cfg.epochs + 1):
        generator.train()
        critic.train()
        perm = torch.from_numpy(shuffle_rng.permutation(n))
        d_loss, w_est, gp_sum, sc_vals = 0.0, 0.0, 0.0, []
        try:
            for b in range(n_batches):
                real = data[perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
                z, c = sample_latent(cfg.batch_size, cfg.condition_kind, generator=latent_g,
                                     n_categories=cfg.n_categories)
                with torch.no_grad():
                    fake = _fake(generator, z, c)
                terms = critic_terms(critic, real, fake, cfg.lambda_gp, generator=gp_g)
                opt_d.zero_grad(set_to_none=True)
                terms["loss"].backward()
                opt_d.step()
                d_loss += terms["loss"].item()
                w_est += terms["wasserstein"].item()
                gp_sum += terms["gp"].item()
                step += 1

                if step % cfg.n_critic == 0:
                    z, c = sample_latent(cfg.batch_size, cfg.condition_kind, generator=latent_g,
                                         n_categories=cfg.n_categories)
                    gterms = generator_terms(critic, _fake(generator, z, c), c, cfg.lambda_sc, cfg.condition_kind)
                    opt_g.zero_grad(set_to_none=True)
                    gterms["loss"].backward()
                    opt_g.step()
                    sc_vals.append(gterms["sc"].item())
        except NonFiniteLoss as exc:
            raise TrainingDiverged(epoch, exc.term, last_ckpt) from exc

        row = {
            "epoch": epoch,
            "critic_loss": d_loss / n_batches,
            "wasserstein_estimate": w_est / n_batches,
            "gp_term": gp_sum / n_batches,
            "sc_term": float(np.mean(sc_vals)) if sc_vals else float("nan"),
            "lr": opt_g.param_groups[0]["lr"],
        }
        model.trace.append(row)
        model.epochs_trained = epoch
        # plateau of the distance estimate, not of the critic loss, which rises as G improves
        for s in sched:
            s.step(row["wasserstein_estimate"])

        if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
            ks = _ks_to_real(model, real_cdf, cfg.ks_samples, cfg.seed + 4)
            log.info("epoch %d  critic %.4f  W %.4f  GP %.4f  SC %.4f  KS %.4f", epoch, row["critic_loss"],
                     row["wasserstein_estimate"], row["gp_term"], row["sc_term"], ks)
            if out_dir is not None:
                last_ckpt = save_model(out_dir / f"epoch_{epoch:05d}.json", model)
                if ks < best_ks:
                    save_model(out_dir / "best.json", model)
            best_ks = min(best_ks, ks)

    if out_dir is not None:
        save_model(out_dir / "final.json", model)
        write_trace(out_dir / "trace.csv", model.trace)
    return model


def _ks_to_real(model: GanModel, real_cdf, n: int, seed: int) -> float:
    z, c = sample_latent(n, model.condition_kind, seed, n_categories=model.n_categories)
    fake = _forward(model, z, c)
    return ks_distance(real_cdf, empirical_cdf(np.maximum(fake, 0.0)))


# ---------------------------------------------------------------- generation

def _forward(model: GanModel, z: torch.Tensor, c: torch.Tensor) -> np.ndarray:
    model.generator.eval()
    with torch.no_grad():
        out = _fake(model.generator, z.float(), c.float())
    return out.double().numpy()


def generate(model: GanModel, z, c=None) -> LoadCurveDataset:
    """Generator forward pass, negatives floored at 0, scaled back to kW.

    ``z`` may be the full (n, 88) code matrix, or the (n, 80) noise part with
    the (n, 8) condition part given as ``c``.
    """
    z = torch.as_tensor(z)
    if c is None:
        if z.ndim != 2 or z.shape[1] != INPUT_DIM:
            raise ValueError(f"codes must have shape (n, {INPUT_DIM}), got {tuple(z.shape)}")
        z, c = z[:, :LATENT_DIM], z[:, LATENT_DIM:]
    c = torch.as_tensor(c)
    if z.ndim != 2 or z.shape[1] != LATENT_DIM or c.shape != (z.shape[0], CODE_DIM):
        raise ValueError(f"expected z (n, {LATENT_DIM}) and c (n, {CODE_DIM}), got {tuple(z.shape)} and {tuple(c.shape)}")
    out = _forward(model, z, c)
    neg = float((out < 0).mean())
    if neg > 0:
        log.info("floored %.2f%% of generated values at 0", 100 * neg)
    return LoadCurveDataset(np.maximum(out, 0.0) * model.normalization.scale)


def condition_sweep(model: GanModel, var_index: int, values, n_per_value: int, seed: int = 0) -> list[dict]:
    """Per-interval mean and 10th/90th percentiles with one code entry pinned.

    The same noise and remaining code entries are reused for every value, so
    differences between bundles come from the pinned entry alone.
    """
    if model.condition_kind != CONTINUOUS:
        raise ValueError("condition sweeps need a continuous-condition model")
    if not 0 <= var_index < CODE_DIM:
        raise ValueError(f"var_index must lie in [0, {CODE_DIM}), got {var_index}")
    if n_per_value < 1:
        raise ValueError("n_per_value must be >= 1")
    z, c = sample_latent(n_per_value, CONTINUOUS, seed)
    bundles = []
    for v in values:
        cv = c.clone()
        cv[:, var_index] = float(v)
        stats = summary_stats(generate(model, z, cv).curves)
        bundles.append({"value": float(v), "var_index": var_index, **stats})
    return bundles
