"""Command-line pipeline: theory, Monte Carlo, synthetic spectra, estimators.

Every command reads the run configuration, writes its tables below the
output directory and stamps each file with the configuration hash, the seed
and the package version.  Downstream commands read the files of upstream
ones and fail with the name of any missing file.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import (alpha_from_fidelity, alpha_from_variance, shift_distribution_test,
                        shift_variance, MIN_KS_SAMPLES)
from .config import dump_config, load_config
from .io import (load_curve, load_fit_report, load_trace, read_table, save_curve,
                 save_fit_report, save_trace, write_table)
from .resfit import fit_trace, ordinary_fidelity
from .rpw import build_level_ensemble
from .scatfid import correlogram, scattering_fidelity
from .spectra import synth_spectrum
from .theory import analytic_fidelity, default_time_grid, lambda_param, mc_fidelity

EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING = 3


class MissingArtifact(Exception):
    pass


def _tag(dr):
    return f"{dr * 1e3:g}mm"


def _header(config, command, **extra):
    return {"command": command, "config_hash": config.hash(), "seed": config.seed,
            "version": __version__, **extra}


def _out(config, *parts):
    return Path(config.output_dir).joinpath(*parts)


def _require(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing upstream file {path}; run the command that produces it first")
    return path


def _shifts(config):
    shifts = config.billiard.shifts
    if len(shifts) == 0:
        raise ValueError("the shift list is empty")
    return shifts


def _lambda(config, dr):
    b = config.billiard
    return float(lambda_param(b.alpha, b.area, b.k_center, dr))


def _time_grid(config, dr):
    lam = _lambda(config, dr)
    if lam > 0:
        return default_time_grid(lam, config.times.n_points, config.times.span)
    return np.linspace(0, config.times.span, config.times.n_points)


def _ensemble(config):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_level_ensemble(config.billiard, config.ensemble.n_positions, config.seed,
                                    base=config.ensemble.base,
                                    per_level_k=config.ensemble.per_level_k)


def _trace_path(config, i):
    suffix = ".csv.gz" if config.compress_traces else ".csv"
    return _out(config, "synth", f"trace_{i:04d}{suffix}")


def _pairs(config):
    _, c = read_table(_require(_out(config, "synth", "pairs.csv")))
    out = {}
    for dr, i0, i1 in zip(c["dr"], c["i0"], c["i1"]):
        out.setdefault(float(dr), []).append((int(i0), int(i1)))
    return out


def _pairs_for(config, pairs, dr):
    for key, value in pairs.items():
        if np.isclose(key, dr, rtol=0, atol=1e-12):
            return value
    raise MissingArtifact(f"no position pairs for shift {dr} in {_out(config, 'synth', 'pairs.csv')}")


def cmd_theory(config):
    shifts = _shifts(config)
    b = config.billiard
    lams = [_lambda(config, dr) for dr in shifts]
    files = []
    for dr, lam in zip(shifts, lams):
        curve = analytic_fidelity(lam, _time_grid(config, dr), label=f"analytic {_tag(dr)}")
        files.append(save_curve(_out(config, "theory", f"analytic_{_tag(dr)}.csv"), curve,
                                _header(config, "theory", dr=dr, alpha=b.alpha, k=b.k_center)))
    ratio = np.array(lams) / lams[0] if lams[0] > 0 else np.full(len(lams), np.nan)
    files.append(write_table(_out(config, "theory", "lambda.csv"),
                             _header(config, "theory", alpha=b.alpha, area=b.area, k=b.k_center),
                             {"dr": np.array(shifts), "lambda": np.array(lams),
                              "ratio_to_first": ratio}))
    return files


def cmd_mc(config, jobs=1):
    b = config.billiard
    files = []
    for i, dr in enumerate(_shifts(config)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            curve = mc_fidelity(b.alpha, b.area, b.k_center, dr, _time_grid(config, dr),
                                config.mc.n_samples, [config.seed, 1000 + i],
                                n_shards=config.mc.n_shards, n_jobs=jobs, guard=b.guard)
        curve.label = f"mc {_tag(dr)}"
        files.append(save_curve(_out(config, "mc", f"mc_{_tag(dr)}.csv"), curve,
                                _header(config, "mc", dr=dr)))
    return files


def cmd_synth(config):
    ens = _ensemble(config)
    files = []
    for i in range(ens.n_positions):
        trace = synth_spectrum(ens, i, config.widths, config.grid, config.noise, seed=config.seed)
        files.append(save_trace(_trace_path(config, i), trace, _header(config, "synth")))
    dr_col, i0, i1 = [], [], []
    for dr in _shifts(config):
        for a, b in ens.pairs(dr):
            dr_col.append(dr)
            i0.append(a)
            i1.append(b)
    files.append(write_table(_out(config, "synth", "pairs.csv"), _header(config, "synth"),
                             {"dr": np.array(dr_col, float), "i0": np.array(i0), "i1": np.array(i1)}))
    dump_config(config, _out(config, "config.json"))
    return files


def _load_traces(config, indices):
    return {i: load_trace(_require(_trace_path(config, i))) for i in sorted(indices)}


def cmd_scatfid(config):
    pairs = _pairs(config)
    files = []
    for dr in _shifts(config):
        idx = _pairs_for(config, pairs, dr)
        if not idx:
            raise ValueError(f"scattering fidelity needs position pairs; none for {_tag(dr)}")
        traces = _load_traces(config, {i for p in idx for i in p})
        if len(traces) < 2:
            raise ValueError("scattering fidelity needs at least two spectra")
        lam = _lambda(config, dr)
        t_max = config.times.span / lam if lam > 0 else config.times.span
        window = replace(config.window, t_max=t_max)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            curve = scattering_fidelity([correlogram(traces[a], traces[b], window) for a, b in idx],
                                        label=f"scattering {_tag(dr)}")
        files.append(save_curve(_out(config, "scatfid", f"scatfid_{_tag(dr)}.csv"), curve,
                                _header(config, "scatfid", dr=dr, **{"lambda": lam})))
    return files


def _fit_path(config, i):
    return _out(config, "fit", f"fit_{i:04d}.csv")


def cmd_fit(config):
    pairs = _pairs(config)
    indices = sorted({i for v in pairs.values() for p in v for i in p})
    files = []
    n_found, n_ok = [], []
    for i in indices:
        trace = load_trace(_require(_trace_path(config, i)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = fit_trace(trace, max_rounds=config.fit.max_rounds)
        files.append(save_fit_report(_fit_path(config, i), report, _header(config, "fit")))
        n_found.append(len(report))
        n_ok.append(int(report.converged.sum()))
    files.append(write_table(_out(config, "fit", "summary.csv"), _header(config, "fit"),
                             {"position": np.array(indices), "n_found": np.array(n_found),
                              "n_ok": np.array(n_ok)}))
    return files


def _fit_pairs(config, idx):
    reports = {i: load_fit_report(_require(_fit_path(config, i))) for i in sorted({i for p in idx for i in p})}
    return [(reports[a], reports[b]) for a, b in idx]


def cmd_ordfid(config):
    pairs = _pairs(config)
    files = []
    for dr in _shifts(config):
        fits = _fit_pairs(config, _pairs_for(config, pairs, dr))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            curve = ordinary_fidelity([a for a, _ in fits], [b for _, b in fits],
                                      _time_grid(config, dr), gate=config.fit.gate)
        curve.label = f"ordinary {_tag(dr)}"
        files.append(save_curve(_out(config, "ordfid", f"ordfid_{_tag(dr)}.csv"), curve,
                                _header(config, "ordfid", dr=dr, **{"lambda": _lambda(config, dr)})))
    return files


def cmd_calibrate(config):
    b = config.billiard
    pairs = _pairs(config)
    ens = _ensemble(config)
    rows = {k: [] for k in ("dr", "source", "variance", "variance_err", "alpha_hat",
                            "alpha_err", "lambda_hat", "lambda_err", "ks_statistic", "ks_pvalue")}
    lines = [f"alpha used to generate the data: {b.alpha:.6g}"]

    def add(dr, source, var=np.nan, var_err=np.nan, a=np.nan, a_err=np.nan,
            lam=np.nan, lam_err=np.nan, ks=np.nan, p=np.nan):
        for key, value in zip(rows, (dr, source, var, var_err, a, a_err, lam, lam_err, ks, p)):
            rows[key].append(value)

    for dr in _shifts(config):
        if dr == 0:
            continue
        fits = {dr: _fit_pairs(config, _pairs_for(config, pairs, dr))}
        for source, data in (("ensemble", ens), ("fits", fits)):
            st = shift_variance(data, dr, gate=config.fit.gate)
            lam = st.lambda_hat
            if st.variance <= 0:
                add(dr, source, st.variance, st.variance_err, lam=lam.value)
                lines.append(f"{_tag(dr)} {source:>8}: zero shift variance, alpha not identifiable")
                continue
            est = alpha_from_variance(st, b.area, b.k_center)
            ks, p = np.nan, np.nan
            if source == "ensemble" and st.n_samples >= MIN_KS_SAMPLES:
                rep = shift_distribution_test(ens, dr, b.alpha)
                ks, p = rep.statistic, rep.pvalue
            add(dr, source, st.variance, st.variance_err, est.value, est.stderr,
                lam.value, lam.stderr, ks, p)
            lines.append(f"{_tag(dr)} {source:>8}: alpha = {est.value:.6g} +- {est.stderr:.2g}, "
                         f"lambda = {lam.value:.6g} +- {lam.stderr:.2g}"
                         + (f", KS D = {ks:.4g} (p = {p:.3g})" if np.isfinite(ks) else ""))
        lam_unit = float(lambda_param(1.0, b.area, b.k_center, dr))
        lam_true = _lambda(config, dr)
        for kind in ("ordfid", "scatfid"):
            path = _out(config, kind, f"{kind}_{_tag(dr)}.csv")
            if not path.exists() or lam_true <= 0:
                continue
            curve = load_curve(path)
            est = alpha_from_fidelity(curve, b.area, b.k_center, dr,
                                      t_max=config.fit.fit_span / lam_true)
            add(dr, f"{kind}_fit", a=est.value, a_err=est.stderr,
                lam=est.value * lam_unit, lam_err=est.stderr * lam_unit)
            lines.append(f"{_tag(dr)} {kind + ' fit':>8}: alpha = {est.value:.6g} +- {est.stderr:.2g}")
    cols = {k: np.array(v, dtype=object if k == "source" else float) for k, v in rows.items()}
    path = write_table(_out(config, "calibrate", "calibration.csv"), _header(config, "calibrate"), cols)
    txt = _out(config, "calibrate", "calibration.txt")
    txt.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [path, txt]


def cmd_figures(config):
    from .figures import plot_collapse, plot_fidelity, plot_loglog

    shifts = _shifts(config)
    analytic = [load_curve(_require(_out(config, "theory", f"analytic_{_tag(dr)}.csv"))) for dr in shifts]
    lams = [_lambda(config, dr) for dr in shifts]

    def optional(kind, prefix):
        out = []
        for dr, lam in zip(shifts, lams):
            path = _out(config, kind, f"{prefix}_{_tag(dr)}.csv")
            if path.exists():
                out.append((load_curve(path), lam))
        return out

    mc = optional("mc", "mc")
    scat = optional("scatfid", "scatfid")
    ordi = optional("ordfid", "ordfid")
    fig = _out(config, "figures")
    files = [plot_fidelity([c for c, _ in scat], fig / "fidelity_scattering.svg",
                           "scattering fidelity", analytic=analytic),
             plot_loglog(analytic + [c for c, _ in mc], lams + [l for _, l in mc],
                         fig / "fidelity_loglog.svg")]
    layers = [(c, l) for c, l in mc + scat + ordi if l > 0]
    files.append(plot_collapse([c for c, _ in layers], [l for _, l in layers],
                               fig / "fidelity_collapse.svg"))
    files.append(plot_fidelity([c for c, _ in ordi], fig / "fidelity_ordinary.svg",
                               "ordinary fidelity", analytic=analytic))
    return files


STAGES = ("theory", "mc", "synth", "scatfid", "fit", "ordfid", "calibrate", "figures")


def run(command, config, jobs=1):
    if command == "pipeline":
        files = []
        for stage in STAGES:
            files += run(stage, config, jobs)
        return files
    if command == "mc":
        return cmd_mc(config, jobs)
    return globals()[f"cmd_{command}"](config)


def build_parser():
    p = argparse.ArgumentParser(prog="localfid",
                                description="Fidelity decay under a shifted point scatterer.")
    p.add_argument("command", choices=STAGES + ("pipeline",))
    p.add_argument("--config", help="JSON run configuration (defaults when omitted)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for Monte Carlo shards")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.out is not None:
            config.output_dir = args.out
        if args.jobs < 1:
            raise ValueError("--jobs must be >= 1")
        files = run(args.command, config, args.jobs)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
