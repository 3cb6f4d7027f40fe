"""Command-line interface.

Exit codes: 0 on success, 2 on configuration errors, 3 on numerical
invariant violations.  ``--config`` points at a JSON document (schema in
the README); individual flags override file fields.
"""

from __future__ import annotations

import dataclasses
import json
import math
import sys

import click
import numpy as np

from . import __version__
from .absorber import gap_optimized_rotation, joint_parametric
from .core import stationary_state, stationary_state_ops
from .errors import ConfigError, QmcError
from .estimator import ProtocolConfig
from .experiments import (
    ExperimentConfig,
    ResultBundle,
    apply_study_preset,
    build_model,
    resolve_output_dir,
    run_experiment,
    run_estimation_study,
)
from .fisher import (
    fisher_from_intensity,
    localize_joint,
    mode_table,
    poisson_product_probability,
    qfi_rate,
    total_intensity,
)
from .patterns import counts_csv_lines, default_separation, extract
from .tim import exact_mode_expectations, fock_state, gram_deviation
from .trajectory import (
    PureStart,
    StationaryStart,
    pattern_event_probability,
    read_packed,
    sample_trajectory,
    write_bits_csv,
    write_packed,
)

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_config(config_path, overrides: dict) -> ExperimentConfig:
    doc = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(doc)


def _guarded(fn):
    """Map library errors to the documented exit codes."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except QmcError as exc:
            click.echo(f"numerical error: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)

    return wrapper


def _resolve_completion(model, theta_abs, name):
    if name == "gap-optimized":
        kr = model.kraus_at(theta_abs)
        return optimize_completion(kr, purify(stationary_state(kr)))
    return name


@click.group()
@click.version_option(__version__)
def main():
    """Quantum Markov chain simulation and pattern-counting estimation."""


common_model_options = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="JSON config document."),
    click.option("--theta", "theta_true", type=float, default=None,
                 help="True / reference parameter."),
    click.option("--completion", type=str, default=None,
                 help="Absorber completion: gram-schmidt | polar | gap-optimized."),
    click.option("--seed", "master_seed", type=int, default=None),
    click.option("--output-dir", type=click.Path(), default=None),
]


def _add_options(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return wrap


@main.command()
@_add_options(common_model_options)
@_guarded
def qfi(config_path, theta_true, completion, master_seed, output_dir):
    """Information rate, total mode intensity and gap diagnostics."""
    cfg = _load_config(config_path, {
        "theta_true": theta_true, "completion": completion,
        "master_seed": master_seed, "output_dir": output_dir,
    })
    model = build_model(cfg.model)
    theta = cfg.theta_true
    f = qfi_rate(model, theta)
    comp = _resolve_completion(model, theta, cfg.completion)
    jp = joint_parametric(model, theta, comp)
    local = localize_joint(jp)
    ti = total_intensity(local)
    from .core import spectral_gap, spectral_gap_ops
    gap_sys = spectral_gap(model.kraus_at(theta))
    gap_joint = spectral_gap_ops(jp.matched.ops)
    click.echo(f"theta               = {theta!r}")
    click.echo(f"qfi_rate            = {f!r}")
    click.echo(f"lambda_tot          = {ti.value!r}")
    click.echo(f"lambda_tot_forms    = {ti.norm_form!r} / {ti.curvature_form!r}")
    click.echo(f"4*lambda_tot - f    = {4 * ti.value - f:.3e}")
    click.echo(f"system spectral gap = {gap_sys!r}")
    click.echo(f"joint spectral gap  = {gap_joint!r}")


@main.command()
@_add_options(common_model_options)
@click.option("--max-len", "-L", type=int, default=12, help="Pattern length cap.")
@_guarded
def modes(config_path, theta_true, completion, master_seed, output_dir, max_len):
    """Pattern-mode amplitude/intensity table as CSV."""
    cfg = _load_config(config_path, {
        "theta_true": theta_true, "completion": completion,
        "master_seed": master_seed, "output_dir": output_dir,
    })
    model = build_model(cfg.model)
    comp = _resolve_completion(model, cfg.theta_true, cfg.completion)
    jp = joint_parametric(model, cfg.theta_true, comp)
    local = localize_joint(jp)
    table = mode_table(local, max_len)
    lam_tot = total_intensity(local).value
    bundle = ResultBundle(resolve_output_dir(cfg, "modes"), cfg)
    rows = []
    cumulative = 0.0
    for e in table.entries:
        cumulative += e.intensity
        rows.append((e.pattern, e.amplitude.real, e.amplitude.imag,
                     e.intensity, cumulative / lam_tot))
    path = bundle.write_csv(
        "modes.csv",
        ["pattern", "re_mu", "im_mu", "lambda", "cumulative_fraction"],
        rows,
    )
    bundle.finalize({
        "theta_ref": cfg.theta_true,
        "max_len": max_len,
        "lambda_tot": lam_tot,
        "captured_fraction": cumulative / lam_tot,
    })
    click.echo(f"wrote {path} (captured fraction {cumulative / lam_tot:.6f})")


@main.command()
@_add_options(common_model_options)
@click.option("--n", type=int, default=1000, help="Trajectory length.")
@click.option("--theta-abs", type=float, default=None,
              help="Absorber parameter (defaults to theta: matched chain).")
@click.option("--index", type=int, default=0, help="Trajectory index.")
@click.option("--initial", type=click.Choice(["pure", "stationary"]),
              default="pure")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--fmt", type=click.Choice(["packed", "csv"]), default="packed")
@click.option("--bare", is_flag=True,
              help="Sample the bare chain (no absorber).")
@_guarded
def sample(config_path, theta_true, completion, master_seed, output_dir,
           n, theta_abs, index, initial, out_path, fmt, bare):
    """Sample one outcome trajectory and write it to disk."""
    cfg = _load_config(config_path, {
        "theta_true": theta_true, "completion": completion,
        "master_seed": master_seed, "output_dir": output_dir,
    })
    model = build_model(cfg.model)
    if bare:
        kraus = model.kraus_at(cfg.theta_true)
        ops = kraus.ops
        start = StationaryStart(stationary_state(kraus))
    else:
        t_abs = cfg.theta_true if theta_abs is None else theta_abs
        comp = _resolve_completion(model, t_abs, cfg.completion)
        jp = joint_parametric(model, t_abs, comp)
        ops = jp.kraus_at(cfg.theta_true)
        if initial == "pure":
            start = PureStart(jp.chi)
        else:
            start = StationaryStart(stationary_state_ops(ops))
    traj = sample_trajectory(ops, start, n, cfg.master_seed, index)
    if fmt == "packed":
        write_packed(out_path, traj.bits)
    else:
        write_bits_csv(out_path, traj.bits)
    click.echo(
        f"wrote {out_path} ({n} steps, {int(traj.bits.sum())} clicks, "
        f"seed={cfg.master_seed}, index={index})"
    )


@main.command()
@click.argument("trajectory_file", type=click.Path(exists=True))
@click.option("--gamma", type=float, default=0.5, help="Separation exponent.")
@click.option("--separation", type=int, default=None,
              help="Explicit separation threshold (overrides gamma).")
@click.option("--out", "out_path", type=click.Path(), default=None)
@_guarded
def extract_cmd(trajectory_file, gamma, separation, out_path):
    """Extract pattern counts from a packed trajectory file."""
    bits = read_packed(trajectory_file)
    sep = separation or default_separation(bits.size, gamma)
    pc = extract(bits, sep)
    lines = counts_csv_lines(pc)
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        click.echo(f"wrote {out_path} ({pc.total()} patterns, separation {sep})")
    else:
        for line in lines:
            click.echo(line)


main.add_command(extract_cmd, name="extract")


@main.command()
@_add_options(common_model_options)
@click.option("--n", type=int, default=None)
@click.option("--n-traj", type=int, default=None)
@click.option("--tau", type=float, default=None)
@click.option("--n-tilde", type=int, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--idealized", is_flag=True, help="Pin stage 1 to theta.")
@_guarded
def estimate(config_path, theta_true, completion, master_seed, output_dir,
             n, n_traj, tau, n_tilde, epsilon, gamma, idealized):
    """Run the two-stage estimation protocol and write an ensemble summary."""
    cfg = _load_config(config_path, {
        "theta_true": theta_true, "completion": completion,
        "master_seed": master_seed, "output_dir": output_dir,
        "n": n, "n_traj": n_traj, "tau": tau, "n_tilde": n_tilde,
        "epsilon": epsilon, "gamma": gamma,
    })
    summary = run_estimation_study(
        cfg, resolve_output_dir(cfg, "estimate"), idealized=idealized or None
    )
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


@main.command(name="verify-tim")
@click.option("--sizes", type=str, default="8,12,16",
              help="Comma-separated chain lengths.")
@click.option("--out", "out_path", type=click.Path(), default=None)
@_guarded
def verify_tim(sizes, out_path):
    """Mode-algebra trend report: Fock norms, Gram deviation."""
    ns = [int(s) for s in sizes.split(",")]
    rows = []
    for n in ns:
        norm_11 = float(np.linalg.norm(fock_state({"11": 1}, n)) ** 2)
        norm_1x2 = float(np.linalg.norm(fock_state({"1": 2}, n)) ** 2)
        dev = gram_deviation([{"1": 2}, {"11": 1}], n)
        rows.append((n, "fock_norm_11", norm_11, (n - 1) / n))
        rows.append((n, "fock_norm_1x2", norm_1x2, 1.0))
        rows.append((n, "gram_deviation", dev, 0.0))
    lines = ["n,quantity,exact,limit"]
    lines += [f"{n},{q},{v!r},{lim!r}" for n, q, v, lim in rows]
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text, nl=False)


@main.command(name="verify-poisson")
@_add_options(common_model_options)
@click.option("--u", "u_local", type=float, default=1.0)
@click.option("--sizes", type=str, default="200,2000,20000")
@click.option("--gamma", type=float, default=0.5)
@_guarded
def verify_poisson(config_path, theta_true, completion, master_seed,
                   output_dir, u_local, sizes, gamma):
    """Exact pattern-event probabilities against their Poisson limits."""
    cfg = _load_config(config_path, {
        "theta_true": theta_true, "completion": completion,
        "master_seed": master_seed, "output_dir": output_dir,
    })
    model = build_model(cfg.model)
    theta0 = cfg.theta_true
    comp = _resolve_completion(model, theta0, cfg.completion)
    jp = joint_parametric(model, theta0, comp)
    local = localize_joint(jp)
    table = mode_table(local, 4)
    lam_tot = total_intensity(local).value
    events = [{"1": 1}, {"1": 2}, {"11": 1}, {"101": 1}]
    click.echo("n,event,exact,poisson_limit,ratio")
    for n in [int(s) for s in sizes.split(",")]:
        theta = theta0 + u_local / math.sqrt(n)
        ops = jp.kraus_at(theta)
        rho_u = stationary_state_ops(ops)
        for counts in events:
            exact = pattern_event_probability(ops, rho_u, n, counts, gamma)
            limit = poisson_product_probability(table, lam_tot, u_local, counts)
            label = ";".join(f"{k}:{v}" for k, v in sorted(counts.items()))
            click.echo(f"{n},{label},{exact!r},{limit!r},{exact / limit!r}")


@main.command()
@_add_options(common_model_options)
@click.option("--study", type=str, default=None,
              help="fig2 | fig3 | fig4 | custom.")
@click.option("--scale-factor", type=float, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--n-traj", type=int, default=None)
@_guarded
def experiment(config_path, theta_true, completion, master_seed, output_dir,
               study, scale_factor, workers, n_traj):
    """Run a study preset end to end and emit a result bundle."""
    cfg = _load_config(config_path, {
        "theta_true": theta_true, "completion": completion,
        "master_seed": master_seed, "output_dir": output_dir,
        "study": study, "scale_factor": scale_factor, "workers": workers,
        "n_traj": n_traj,
    })
    resolved = apply_study_preset(cfg)
    click.echo(
        f"running study={resolved.study} n={resolved.n} "
        f"n_traj={resolved.n_traj} seed={resolved.master_seed}",
        err=True,
    )
    summary = run_experiment(cfg)
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
