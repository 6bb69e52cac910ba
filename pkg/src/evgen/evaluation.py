"""Distribution-level comparison of real and synthetic load-curve sets.

All statistics pool every slot of every curve (CDF) or average per-curve
spectra (PSD); single curves are never compared against each other.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataio import N_SLOTS, LoadCurveDataset

log = logging.getLogger(__name__)

REPORT_VERSION = 1
PSD_FLOOR = 1e-12
PSD_CONVENTION = ("one-sided periodogram of each 96-sample curve, bins k=0..48 in cycles/day; "
                  "interior bins doubled so that sum(bins) == mean(x**2); averaged over curves")


def _curves(x) -> np.ndarray:
    if isinstance(x, LoadCurveDataset):
        return x.curves
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.size == 0:
        raise ValueError("empty curve set")
    return arr


@dataclass(frozen=True)
class CdfCurve:
    """Right-continuous step ECDF: P(X <= support[i]) == prob[i]."""
    support: np.ndarray
    prob: np.ndarray

    def __call__(self, v) -> np.ndarray:
        idx = np.searchsorted(self.support, np.asarray(v, dtype=np.float64), side="right")
        return np.where(idx > 0, self.prob[np.maximum(idx - 1, 0)], 0.0)


@dataclass(frozen=True)
class PsdCurve:
    freqs: np.ndarray
    power: np.ndarray


def empirical_cdf(curves) -> CdfCurve:
    values = _curves(curves).ravel()
    if values.size == 0:
        raise ValueError("empirical_cdf needs at least one value")
    support, counts = np.unique(values, return_counts=True)
    prob = np.cumsum(counts) / values.size
    prob[-1] = 1.0
    return CdfCurve(support, prob)


def ks_distance(a: CdfCurve, b: CdfCurve) -> float:
    """Sup-norm distance between two step CDFs over their merged support."""
    grid = np.union1d(a.support, b.support)
    return float(np.max(np.abs(a(grid) - b(grid))))


def psd(curves) -> PsdCurve:
    x = _curves(curves)
    n = x.shape[1]
    spec = np.abs(np.fft.rfft(x, axis=1)) ** 2 / n ** 2
    # fold negative frequencies in; DC and (even n) Nyquist appear once
    last = -1 if n % 2 == 0 else None
    spec[:, 1:last] *= 2.0
    freqs = np.fft.rfftfreq(n, d=1.0 / n)
    return PsdCurve(freqs, spec.mean(axis=0))


def log_spectral_distance(a: PsdCurve, b: PsdCurve, floor: float = PSD_FLOOR) -> float:
    """RMS over bins of 10*log10((a + floor) / (b + floor)), in dB."""
    if a.freqs.shape != b.freqs.shape or not np.allclose(a.freqs, b.freqs):
        raise ValueError("PSDs are on different frequency grids")
    db = 10.0 * np.log10((a.power + floor) / (b.power + floor))
    return float(np.sqrt(np.mean(db ** 2)))


def summary_stats(curves, lo: float = 10.0, hi: float = 90.0) -> dict[str, np.ndarray]:
    x = _curves(curves)
    return {
        "mean": x.mean(axis=0),
        f"p{lo:g}": np.percentile(x, lo, axis=0),
        f"p{hi:g}": np.percentile(x, hi, axis=0),
    }


@dataclass
class EvalReport:
    real_cdf: CdfCurve
    synth_cdf: CdfCurve
    real_psd: PsdCurve
    synth_psd: PsdCurve
    real_stats: dict
    synth_stats: dict
    ks_distance: float
    log_spectral_distance: float
    n_real: int
    n_synth: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def arr(v):
            return v.tolist() if isinstance(v, np.ndarray) else v
        return {
            "format": "evgen-report",
            "version": REPORT_VERSION,
            "psd_convention": PSD_CONVENTION,
            "ks_distance": self.ks_distance,
            "log_spectral_distance": self.log_spectral_distance,
            "n_real": self.n_real,
            "n_synth": self.n_synth,
            "config": self.config,
            "real": {"cdf": {k: arr(v) for k, v in asdict(self.real_cdf).items()},
                     "psd": {k: arr(v) for k, v in asdict(self.real_psd).items()},
                     "intervals": {k: arr(v) for k, v in self.real_stats.items()}},
            "synth": {"cdf": {k: arr(v) for k, v in asdict(self.synth_cdf).items()},
                      "psd": {k: arr(v) for k, v in asdict(self.synth_psd).items()},
                      "intervals": {k: arr(v) for k, v in self.synth_stats.items()}},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        if doc.get("format") != "evgen-report":
            raise ValueError("not an evaluation report")
        if doc["version"] != REPORT_VERSION:
            raise ValueError(f"unsupported report version {doc['version']}")

        def side(s):
            cdf = CdfCurve(np.array(s["cdf"]["support"]), np.array(s["cdf"]["prob"]))
            p = PsdCurve(np.array(s["psd"]["freqs"]), np.array(s["psd"]["power"]))
            return cdf, p, {k: np.array(v) for k, v in s["intervals"].items()}

        rc, rp, rs = side(doc["real"])
        sc, sp, ss = side(doc["synth"])
        return cls(rc, sc, rp, sp, rs, ss, doc["ks_distance"], doc["log_spectral_distance"],
                   doc["n_real"], doc["n_synth"], doc.get("config", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def compare(real: LoadCurveDataset, synth: LoadCurveDataset, plot_dir: str | Path | None = None,
            labels: tuple[str, str] = ("real", "synthetic"), config: dict | None = None) -> EvalReport:
    if real.is_normalized != synth.is_normalized:
        raise ValueError("cannot compare a normalized curve set against a raw one")
    if real.is_normalized and not np.isclose(real.normalization.scale, synth.normalization.scale):
        raise ValueError("curve sets were normalized with different scales")
    rc, sc = empirical_cdf(real), empirical_cdf(synth)
    rp, sp = psd(real), psd(synth)
    report = EvalReport(
        real_cdf=rc, synth_cdf=sc, real_psd=rp, synth_psd=sp,
        real_stats=summary_stats(real), synth_stats=summary_stats(synth),
        ks_distance=ks_distance(rc, sc), log_spectral_distance=log_spectral_distance(sp, rp),
        n_real=len(real), n_synth=len(synth), config=dict(config or {}),
    )
    if plot_dir is not None:
        plot_report(report, plot_dir, labels)
    return report


def gmm_cluster_sweep(data: LoadCurveDataset, k_list, cfg=None, n_synth: int | None = None,
                      reference: LoadCurveDataset | None = None) -> list[EvalReport]:
    """Fit one GMM per cluster count on ``data`` and score its samples.

    Samples are compared against ``reference`` (``data`` itself by default).
    """
    from dataclasses import replace

    from .gmm import EmConfig, EmError, em_fit, extract_triples, sample_curves

    cfg = cfg or EmConfig()
    triples = extract_triples(data)
    reference = reference if reference is not None else data
    n_synth = n_synth or len(reference)
    reports = []
    for k in k_list:
        k = int(k)
        if k > len(triples):
            raise ValueError(f"K={k} exceeds the {len(triples)} available sessions")
        try:
            params, trace = em_fit(triples, replace(cfg, clusters=k))
        except EmError as exc:
            raise EmError(f"K={k}: {exc}") from exc
        synth = sample_curves(params, n_synth, seed=cfg.seed)
        reports.append(compare(reference, synth, config={
            "model": "gmm", "clusters": k, "seed": cfg.seed, "tol": cfg.tol,
            "max_iter": cfg.max_iter, "em_iterations": len(trace)}))
        log.info("K=%d  KS=%.4f  LSD=%.3f dB", k, reports[-1].ks_distance, reports[-1].log_spectral_distance)
    return reports


def plot_report(report: EvalReport, out_dir: str | Path, labels=("real", "synthetic"), fmt: str = "png") -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=(5, 4))
    for cdf, lab in ((report.real_cdf, labels[0]), (report.synth_cdf, labels[1])):
        ax.step(cdf.support, cdf.prob, where="post", label=lab)
    ax.set_xlabel("load")
    ax.set_ylabel("P(X <= x)")
    ax.set_title(f"CDF  (KS = {report.ks_distance:.3f})")
    ax.legend()
    paths.append(out_dir / f"cdf.{fmt}")
    fig.savefig(paths[-1], bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4))
    for p, lab in ((report.real_psd, labels[0]), (report.synth_psd, labels[1])):
        ax.semilogy(p.freqs, p.power + PSD_FLOOR, label=lab)
    ax.set_xlabel("frequency (cycles/day)")
    ax.set_ylabel("power")
    ax.set_title(f"PSD  (LSD = {report.log_spectral_distance:.2f} dB)")
    ax.legend()
    paths.append(out_dir / f"psd.{fmt}")
    fig.savefig(paths[-1], bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4))
    hours = np.arange(N_SLOTS) / 4
    for st, lab, col in ((report.real_stats, labels[0], "C0"), (report.synth_stats, labels[1], "C1")):
        ax.plot(hours, st["mean"], color=col, label=f"{lab} mean")
        ax.fill_between(hours, st["p10"], st["p90"], color=col, alpha=0.2)
    ax.set_xlabel("hour of day")
    ax.set_ylabel("load")
    ax.legend()
    paths.append(out_dir / f"intervals.{fmt}")
    fig.savefig(paths[-1], bbox_inches="tight")
    plt.close(fig)
    return paths


def plot_sweep(bundles: list[dict], out_path: str | Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    hours = np.arange(N_SLOTS) / 4
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, b in enumerate(bundles):
        col = f"C{i % 10}"
        ax.plot(hours, b["mean"], color=col, label=f"c = {b['value']:g}")
        ax.fill_between(hours, b["p10"], b["p90"], color=col, alpha=0.15)
    ax.set_xlabel("hour of day")
    ax.set_ylabel("load")
    ax.legend()
    fig.savefig(out_path, bbox_inches="tight")
    plt.close(fig)
    return Path(out_path)
