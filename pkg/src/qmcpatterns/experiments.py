"""Experiment orchestration and result serialization.

Three study presets reproduce the simulation studies of the reference
dynamics at their published sizes:

* ``fig2`` - matched-absorber counting at a fixed local offset; emits
  per-pattern count histograms with their limiting Poisson overlays.
* ``fig3`` - second estimation stage in isolation (stage 1 idealized);
  emits the final-estimate histogram with a normal overlay.
* ``fig4`` - the full two-stage protocol.

``scale_factor`` shrinks ``n``, ``n_tilde`` and the trajectory count
proportionally for desk-scale runs; the displacement is rescaled as
``tau * scale**(3*eps_hat)`` with ``eps_hat`` inferred from the full-scale
pair ``(n, tau)``, which keeps the displaced-null geometry consistent.

Every run writes a provenance record (config echo, git-style content hash
per artifact, master seed).  Reruns with the same config are bit-identical
regardless of worker count: trajectories are simulated in fixed chunks with
counter-based streams and reassembled in index order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import poisson

from .absorber import gap_optimized_rotation, joint_parametric
from .core import ParametricModel, stationary_state
from .errors import ConfigError
from .estimator import (
    PROTOCOL_CHUNK,
    EstimationReport,
    ProtocolConfig,
    run_protocol_chunk,
    summarize,
)
from .fisher import localize_joint, mode_table, qfi_rate, total_intensity
from .models import paper_qubit_model, tabulated_model
from .patterns import default_separation, extract
from .trajectory import PureStart, sample_ensemble

STUDIES = ("fig2", "fig3", "fig4", "custom")
OUTPUT_DIR_ENV = "QMCPATTERNS_OUTPUT_DIR"

HISTOGRAM_PATTERNS = ("1", "11", "101", "111")


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description (JSON document + CLI overrides)."""

    study: str = "custom"
    model: dict = field(default_factory=lambda: {"type": "paper-qubit"})
    theta_true: float = 0.2
    n: int = 600_000
    n_traj: int = 100
    n_tilde: int | None = None
    tau: float | None = None
    epsilon: float | None = None
    u_local: float | None = None
    gamma: float = 0.15
    master_seed: int = 20240801
    output_dir: str | None = None
    workers: int = 0  # 0 = use available parallelism
    scale_factor: float = 1.0
    completion: str = "gap-optimized"
    fisher_at: str = "absorber"
    fisher_scaling: str = "rate"

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg = ExperimentConfig(**doc)
        if cfg.study not in STUDIES:
            raise ConfigError(f"study must be one of {STUDIES}")
        if not 0 < cfg.scale_factor <= 1:
            raise ConfigError("scale_factor must lie in (0, 1]")
        if cfg.n_traj < 1 or cfg.n < 1:
            raise ConfigError("n and n_traj must be positive")
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def build_model(spec: dict) -> ParametricModel:
    kind = spec.get("type", "paper-qubit")
    if kind == "paper-qubit":
        return paper_qubit_model(
            damping=spec.get("damping", 0.8),
            phase=spec.get("phase", math.pi / 4),
            theta_domain=tuple(spec.get("theta_domain", (0.02, 0.9))),
        )
    if kind == "kraus-table":
        path = spec.get("file")
        if not path:
            raise ConfigError("kraus-table model requires a 'file' entry")
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        thetas = np.asarray(doc["thetas"], dtype=float)
        k0 = np.asarray(doc["k0_real"]) + 1j * np.asarray(doc["k0_imag"])
        k1 = np.asarray(doc["k1_real"]) + 1j * np.asarray(doc["k1_imag"])
        return tabulated_model(thetas, k0, k1)
    raise ConfigError(f"unknown model type {kind!r}")


def apply_study_preset(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill in the published sizes of the chosen study, then rescale."""
    presets = {
        "fig2": dict(n=600_000, n_traj=2000, u_local=2.0, tau=None, n_tilde=None),
        "fig3": dict(n=600_000, n_traj=1000, tau=7.0, n_tilde=0, u_local=None),
        "fig4": dict(n=6_600_000, n_traj=1070, tau=25.5, n_tilde=400_000,
                     u_local=None),
    }
    if cfg.study in presets:
        cfg = dataclasses.replace(cfg, **presets[cfg.study])
    s = cfg.scale_factor
    if s < 1.0:
        updates = {
            "n": max(1000, math.ceil(cfg.n * s)),
            "n_traj": max(8, math.ceil(cfg.n_traj * s)),
        }
        if cfg.n_tilde:
            updates["n_tilde"] = max(100, math.ceil(cfg.n_tilde * s))
        if cfg.tau is not None:
            eps_hat = math.log(cfg.tau) / (3.0 * math.log(cfg.n))
            updates["tau"] = cfg.tau * s ** (3.0 * eps_hat)
        cfg = dataclasses.replace(cfg, **updates)
    return cfg


# --------------------------------------------------------------------------
# result bundle
# --------------------------------------------------------------------------

def git_blob_sha1(data: bytes) -> str:
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


class ResultBundle:
    """Directory of CSV/JSON artifacts plus a provenance record."""

    def __init__(self, out_dir: str, config: ExperimentConfig):
        self.out_dir = out_dir
        self.config = config
        self.artifacts: dict[str, str] = {}
        os.makedirs(out_dir, exist_ok=True)

    def write_text(self, name: str, text: str) -> str:
        path = os.path.join(self.out_dir, name)
        data = text.encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(data)
        self.artifacts[name] = git_blob_sha1(data)
        return path

    def write_csv(self, name: str, header: list[str], rows) -> str:
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_csv_cell(x) for x in row))
        return self.write_text(name, "\n".join(lines) + "\n")

    def finalize(self, summary: dict) -> None:
        self.write_text(
            "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n"
        )
        provenance = {
            "config": self.config.to_dict(),
            "master_seed": self.config.master_seed,
            "artifacts": dict(sorted(self.artifacts.items())),
        }
        path = os.path.join(self.out_dir, "provenance.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(provenance, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _csv_cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def resolve_output_dir(cfg: ExperimentConfig, default_name: str) -> str:
    if cfg.output_dir:
        return cfg.output_dir
    base = os.environ.get(OUTPUT_DIR_ENV, "results")
    return os.path.join(base, default_name)


# --------------------------------------------------------------------------
# parallel chunk execution
# --------------------------------------------------------------------------

def _chunks(n_traj: int, size: int = PROTOCOL_CHUNK):
    return [range(s, min(s + size, n_traj)) for s in range(0, n_traj, size)]


def _run_counting_chunk(args) -> list[dict[str, int]]:
    """fig2 worker: sample the matched-absorber chain at a local offset and
    extract pattern counts per trajectory."""
    cfg_doc, indices = args
    cfg = ExperimentConfig.from_dict(cfg_doc)
    model = build_model(cfg.model)
    theta_abs = cfg.theta_true - cfg.u_local / math.sqrt(cfg.n)
    kr = model.kraus_at(theta_abs)
    completion = cfg.completion
    if completion == "gap-optimized":
        completion = optimize_completion(kr, purify(stationary_state(kr)))
    jp = joint_parametric(model, theta_abs, completion)
    ops = jp.kraus_at(cfg.theta_true)
    bits = sample_ensemble(
        ops, PureStart(jp.chi), cfg.n, cfg.master_seed, indices, domain="count"
    )
    sep = default_separation(cfg.n, cfg.gamma)
    return [dict(extract(row, sep).counts) for row in bits]


def _run_protocol_chunk_job(args) -> list[EstimationReport]:
    cfg_doc, proto_doc, theta_true, indices = args
    cfg = ExperimentConfig.from_dict(cfg_doc)
    model = build_model(cfg.model)
    proto = ProtocolConfig(**proto_doc)
    return run_protocol_chunk(model, theta_true, proto, indices)


def _parallel_map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def effective_workers(cfg: ExperimentConfig) -> int:
    if cfg.workers > 0:
        return cfg.workers
    return min(8, os.cpu_count() or 1)


# --------------------------------------------------------------------------
# studies
# --------------------------------------------------------------------------

def run_counting_study(cfg: ExperimentConfig, out_dir: str | None = None,
                       quiet: bool = True) -> dict:
    """fig2: per-pattern count histograms against Poisson overlays."""
    if cfg.u_local is None:
        raise ConfigError("counting study requires u_local")
    theta_abs = cfg.theta_true - cfg.u_local / math.sqrt(cfg.n)
    model = build_model(cfg.model)
    kr = model.kraus_at(theta_abs)
    completion = cfg.completion
    if completion == "gap-optimized":
        completion = optimize_completion(kr, purify(stationary_state(kr)))
    jp = joint_parametric(model, theta_abs, completion)
    local = localize_joint(jp)
    table = mode_table(local, 12)
    lam_tot = total_intensity(local).value

    jobs = [(cfg.to_dict(), list(c)) for c in _chunks(cfg.n_traj)]
    results = _parallel_map(_run_counting_chunk, jobs, effective_workers(cfg))
    counts_per_traj: list[dict[str, int]] = [c for chunk in results for c in chunk]

    bundle = ResultBundle(out_dir or resolve_output_dir(cfg, "fig2"), cfg)
    tv_by_pattern = {}
    u = cfg.u_local
    for pattern in HISTOGRAM_PATTERNS:
        values = np.array([c.get(pattern, 0) for c in counts_per_traj])
        intensity = table.intensity(pattern) * u * u
        hi = int(max(values.max(), math.ceil(intensity + 8 * math.sqrt(intensity + 1))))
        support = np.arange(hi + 1)
        emp = np.bincount(values, minlength=hi + 1) / len(values)
        pois = poisson.pmf(support, intensity)
        tv = 0.5 * float(np.abs(emp - pois).sum() + max(0.0, 1.0 - pois.sum()))
        tv_by_pattern[pattern] = tv
        bundle.write_csv(
            f"counts_{pattern}.csv",
            ["count", "empirical", "poisson"],
            [(int(k), float(emp[k]), float(pois[k])) for k in support],
        )
    bundle.write_csv(
        "per_trajectory_counts.csv",
        ["index", "total", "counts_json"],
        [
            (i, sum(c.values()), json.dumps(c, sort_keys=True).replace(",", ";"))
            for i, c in enumerate(counts_per_traj)
        ],
    )
    summary = {
        "study": "fig2",
        "theta_abs": theta_abs,
        "u_local": u,
        "lambda_tot": lam_tot,
        "intensities": {p: table.intensity(p) for p in HISTOGRAM_PATTERNS},
        "tv_distance": tv_by_pattern,
        "n": cfg.n,
        "n_traj": cfg.n_traj,
        "mean_total_count": float(
            np.mean([sum(c.values()) for c in counts_per_traj])
        ),
    }
    bundle.finalize(summary)
    return summary


def run_estimation_study(cfg: ExperimentConfig, out_dir: str | None = None,
                         idealized: bool | None = None) -> dict:
    """fig3 / fig4: estimator ensembles with normal-overlay histograms."""
    model = build_model(cfg.model)
    if idealized is None:
        idealized = cfg.study == "fig3"
    proto = ProtocolConfig(
        n=cfg.n,
        n_tilde=0 if idealized else cfg.n_tilde,
        tau=cfg.tau,
        epsilon=cfg.epsilon,
        gamma=cfg.gamma,
        master_seed=cfg.master_seed,
        idealized_stage1=cfg.theta_true if idealized else None,
        completion=cfg.completion,
        fisher_at=cfg.fisher_at,
        fisher_scaling=cfg.fisher_scaling,
    ).resolved()
    proto_doc = dataclasses.asdict(proto)

    jobs = [
        (cfg.to_dict(), proto_doc, cfg.theta_true, list(c))
        for c in _chunks(cfg.n_traj)
    ]
    results = _parallel_map(_run_protocol_chunk_job, jobs, effective_workers(cfg))
    reports = [r for chunk in results for r in chunk]
    reports.sort(key=lambda r: r.index)

    f_rate = qfi_rate(model, cfg.theta_true)
    summary_obj = summarize(reports, cfg.theta_true, proto, f_rate)

    bundle = ResultBundle(
        out_dir or resolve_output_dir(cfg, cfg.study), cfg
    )
    bundle.write_csv(
        "reports.csv",
        ["index", "theta_tilde", "theta_abs", "tau", "total_count",
         "u_hat", "theta_hat", "f_used"],
        [
            (r.index, r.theta_tilde, r.theta_abs, r.tau, r.total_count,
             r.u_hat, r.theta_hat, r.f_used)
            for r in reports
        ],
    )
    hats = np.array([r.theta_hat for r in reports])
    edges = np.histogram_bin_edges(hats, bins="fd")
    hist, _ = np.histogram(hats, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    sigma2 = 1.0 / (cfg.n * f_rate)
    overlay = (
        np.exp(-((centers - cfg.theta_true) ** 2) / (2 * sigma2))
        / math.sqrt(2 * math.pi * sigma2)
    )
    bundle.write_csv(
        "theta_hat_hist.csv",
        ["bin_center", "density", "normal_overlay"],
        [
            (float(c), float(h / (len(hats) * width)), float(o))
            for c, h, o in zip(centers, hist, overlay)
        ],
    )
    summary = {
        "study": cfg.study,
        "idealized_stage1": idealized,
        "theta_true": cfg.theta_true,
        "n": proto.n,
        "n_tilde": proto.n_tilde,
        "tau": proto.tau,
        "gamma": proto.gamma,
        "n_traj": len(reports),
        "qfi_rate": f_rate,
        "f_eff_stage1": summary_obj.f_eff_stage1,
        "f_eff_final": summary_obj.f_eff_final,
        "mean_theta_hat": summary_obj.mean_theta_hat,
        "var_theta_hat": summary_obj.var_theta_hat,
    }
    bundle.finalize(summary)
    return summary


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    cfg = apply_study_preset(cfg)
    if cfg.study == "fig2":
        return run_counting_study(cfg, out_dir)
    if cfg.study in ("fig3", "fig4"):
        return run_estimation_study(cfg, out_dir)
    if cfg.u_local is not None:
        return run_counting_study(cfg, out_dir)
    return run_estimation_study(cfg, out_dir, idealized=cfg.n_tilde == 0)
