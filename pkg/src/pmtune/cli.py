"""``pmtune`` command line: bound tables, sandwich intervals, tuning studies,
noise calibration, the finite-state verification battery, and the
random-walk-limit comparison.

Configuration is a flat ``key = value`` text file (``#`` comments allowed);
every key can be overridden on the command line as ``--key value``.
Unknown keys are errors.  A seed is mandatory: there is no wall-clock
default, so re-running a command overwrites its outputs byte for byte.
Outputs land under ``<outdir>/<command>/``; CSV files are authoritative and
SVG figures are best-effort companions.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import traceback
from pathlib import Path

import numpy as np

from . import bounds as bd
from . import calibrate as cal
from . import oracle, ssm, studies
from .gaussnoise import build_table
from .svgfig import line_plot_svg

__all__ = ["main"]

_COMMANDS = {}


def _command(name, schema):
    def wrap(fn):
        _COMMANDS[name] = (fn, schema)
        return fn

    return wrap


_COMMON = {
    "seed": (int, None),  # None means required
    "outdir": (str, "out"),
}


def _parse_config_file(path):
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _coerce(schema, raw_values):
    out = {}
    for key, (typ, default) in schema.items():
        out[key] = default
    for key, raw in raw_values.items():
        if key not in schema:
            raise SystemExit(
                f"unknown config key {key!r}; known keys: {', '.join(sorted(schema))}"
            )
        typ = schema[key][0]
        try:
            if typ is bool:
                out[key] = raw if isinstance(raw, bool) else raw.lower() in ("1", "true", "yes")
            elif isinstance(raw, str) and typ in (tuple, list):
                out[key] = tuple(
                    float(x) if "." in x or "e" in x.lower() else int(x)
                    for x in raw.replace(",", " ").split()
                )
            else:
                out[key] = typ(raw)
        except (TypeError, ValueError) as exc:
            raise SystemExit(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}: {exc}")
    missing = [k for k, v in out.items() if v is None]
    if missing:
        raise SystemExit(f"missing required config keys: {', '.join(missing)}")
    return out


def _outdir(cfg, command):
    path = Path(cfg["outdir"]) / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fail(out, command, **context):
    (out / "failure.json").write_text(json.dumps({"command": command, **context}, indent=1))
    return 1


_PROFILE_IF = (1.0, 4.0, 20.0, 80.0)


@_command(
    "bounds-table",
    {
        **_COMMON,
        "sigma_min": (float, 0.1),
        "sigma_max": (float, 3.0),
        "sigma_step": (float, 0.01),
        "if_values": (tuple, _PROFILE_IF),
    },
)
def cmd_bounds_table(cfg):
    """Computing-time bound curves and their minimizers."""
    out = _outdir(cfg, "bounds-table")
    sigmas = np.round(
        np.arange(cfg["sigma_min"], cfg["sigma_max"] + 0.5 * cfg["sigma_step"],
                  cfg["sigma_step"]),
        10,
    )
    rows = []
    curves = {}
    for sigma in sigmas:
        nf = bd.gaussian_functionals(sigma)
        rows.append((sigma, "lrct2", math.inf, bd.rct(1.0 / nf.mean_accept, sigma)))
        rows.append((sigma, "rct_perfect", 1.0, bd.rct(2.0 * nf.inv_accept - 1.0, sigma)))
        for if_param in cfg["if_values"]:
            pro_ex = bd.ExactChainProfile(if_ex=if_param, if_jump=if_param)
            for bound_id in ("urct1", "urct2", "urct3", "urct4", "lrct1"):
                rows.append(
                    (sigma, bound_id, if_param, bd.rct_bound_value(bound_id, sigma, pro_ex))
                )
    bd.write_curves_csv(out / "curves.csv", rows)
    for sigma, bound_id, if_param, value in rows:
        curves.setdefault((bound_id, if_param), []).append((sigma, value))

    opt_rows = []
    bracket = (max(0.1, cfg["sigma_min"]), max(cfg["sigma_max"], 2.5))
    for bound_id in ("rct_perfect", "lrct2"):
        res = bd.minimize_rct(bound_id, bracket=bracket)
        opt_rows.append((bound_id, math.nan, res.sigma_opt, res.value_at_opt))
    for if_param in cfg["if_values"]:
        pro = bd.ExactChainProfile(if_ex=if_param, if_jump=if_param)
        for bound_id in ("urct1", "urct2", "urct3", "urct4", "lrct1"):
            res = bd.minimize_rct(bound_id, pro, bracket=bracket)
            opt_rows.append((bound_id, if_param, res.sigma_opt, res.value_at_opt))
    with open(out / "optima.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bound_id", "if_param", "sigma_opt", "value_at_opt"])
        for row in opt_rows:
            writer.writerow([row[0]] + [format(v, ".17g") for v in row[1:]])
    try:
        for bound_id in ("urct2", "urct4"):
            series = [
                (f"IF={int(p)}", *zip(*curves[(bound_id, p)])) for p in cfg["if_values"]
            ]
            series.append(("lrct2", *zip(*curves[("lrct2", math.inf)])))
            line_plot_svg(
                out / f"{bound_id}.svg",
                series,
                title=f"{bound_id} against sigma",
                xlabel="sigma",
                ylabel="relative computing time",
                log_y=True,
            )
    except Exception:
        pass  # figures are best-effort; the CSV is the contract
    print(f"bounds-table: wrote {out / 'curves.csv'} ({len(rows)} rows)")
    return 0


@_command(
    "sandwich",
    {**_COMMON, "if_jump_values": (tuple, (1, 10, 25, 100, 1000))},
)
def cmd_sandwich(cfg):
    """Sandwich intervals for the optimal noise scale of the bounding chain."""
    out = _outdir(cfg, "sandwich")
    rows = [bd.sandwich_interval(float(v)) for v in cfg["if_jump_values"]]
    bd.write_sandwich_csv(out / "sandwich.csv", rows)
    for row in rows:
        print(
            f"if_jump={row.if_jump:g}: rct=({row.rct_interval[0]:.3f}, "
            f"{row.rct_interval[1]:.3f}) sigma=({row.sigma_interval[0]:.3f}, "
            f"{row.sigma_interval[1]:.3f})"
        )
    print(f"sandwich: wrote {out / 'sandwich.csv'}")
    return 0


@_command(
    "noise-table",
    {
        **_COMMON,
        "sigma_grid": (tuple, tuple(np.round(np.arange(0.2, 3.01, 0.2), 10))),
        "mc_samples": (int, 200_000),
        "cutoff": (int, 200),
    },
)
def cmd_noise_table(cfg):
    """Monte Carlo tabulation of the noise jump-chain functionals."""
    out = _outdir(cfg, "noise-table")
    table = build_table(
        cfg["sigma_grid"], n_samples=cfg["mc_samples"], cutoff=cfg["cutoff"], seed=cfg["seed"]
    )
    table.to_csv(out / "noise_law.csv")
    print(f"noise-table: wrote {out / 'noise_law.csv'} ({table.grid.size} rows)")
    return 0


@_command(
    "ar1-study",
    {
        **_COMMON,
        "n_obs": (int, 300),
        "data_seed": (int, 1),
        "chain_len_exact": (int, 200_000),
        "chain_len_pm": (int, 120_000),
        "sigma_reps": (int, 500),
        "rho_list": (tuple, (0.0, 0.4, 0.6, 0.9)),
        "n_grid": (tuple, studies.AR1_N_GRID),
        "verbose": (bool, True),
    },
)
def cmd_ar1_study(cfg):
    """Inefficiency / computing-time sweep for the AR(1) model."""
    out = _outdir(cfg, "ar1-study")
    config = studies.Ar1StudyConfig(
        n_obs=cfg["n_obs"],
        data_seed=cfg["data_seed"],
        chain_len_exact=cfg["chain_len_exact"],
        chain_len_pm=cfg["chain_len_pm"],
        n_grid=tuple(int(n) for n in cfg["n_grid"]),
        rho_list=tuple(float(r) for r in cfg["rho_list"]),
        sigma_reps=cfg["sigma_reps"],
        seed=cfg["seed"],
    )
    progress = print if cfg["verbose"] else None
    result = studies.run_ar1_study(config, progress=progress)
    with open(out / "ar1_study.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "rho", "N", "sigma_hat", "if_phi", "if_mu", "if_sigma_x",
                "ct_phi", "ct_mu", "ct_sigma_x", "rct_phi", "rct_mu", "rct_sigma_x",
                "acc_rate", "acc_lower_bound",
            ]
        )
        for c in result.cells:
            writer.writerow(
                [format(c.rho, "g"), c.n_particles]
                + [
                    format(v, ".10g")
                    for v in (
                        c.sigma_hat, *c.if_values, *c.ct_values, *c.rct_values,
                        c.acc_rate, c.acc_lower_bound,
                    )
                ]
            )
    with open(out / "ar1_exact.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rho", "if_phi", "if_mu", "if_sigma_x", "acc_rate"])
        for rho, info in result.exact.items():
            writer.writerow(
                [format(rho, "g")]
                + [format(v, ".10g") for v in (*info["if_values"], info["acc_rate"])]
            )
    try:
        for rho in config.rho_list:
            cells = result.cells_for(rho)
            xs = [c.sigma_hat for c in cells]
            line_plot_svg(
                out / f"rct_rho{rho:g}.svg",
                [
                    ("phi", xs, [c.rct_values[0] for c in cells]),
                    ("mu", xs, [c.rct_values[1] for c in cells]),
                    ("sigma_x", xs, [c.rct_values[2] for c in cells]),
                ],
                title=f"relative computing time, rho={rho:g}",
                xlabel="sigma(N)",
                ylabel="RCT",
                log_y=True,
            )
    except Exception:
        pass
    print(f"ar1-study: wrote {out / 'ar1_study.csv'} ({len(result.cells)} cells)")
    return 0


@_command(
    "sv-study",
    {
        **_COMMON,
        "n_obs": (int, 300),
        "data_seed": (int, 5),
        "sigma_target": (float, 1.2),
        "chain_len_cal": (int, 40_000),
        "chain_len_proxy": (int, 15_000),
        "proxy_particles": (int, 2_000),
        "verbose": (bool, True),
    },
)
def cmd_sv_study(cfg):
    """Synthetic two-factor volatility study at a calibrated particle count."""
    out = _outdir(cfg, "sv-study")
    config = studies.SvStudyConfig(
        n_obs=cfg["n_obs"],
        data_seed=cfg["data_seed"],
        sigma_target=cfg["sigma_target"],
        chain_len_cal=cfg["chain_len_cal"],
        chain_len_proxy=cfg["chain_len_proxy"],
        proxy_particles=cfg["proxy_particles"],
        seed=cfg["seed"],
    )
    progress = print if cfg["verbose"] else None
    result = studies.run_sv_study(config, progress=progress)
    d = result.diagnostics
    with open(out / "sv_study.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "if_calibrated", "if_se", "if_proxy", "if_proxy_se"])
        names = ("k1", "mu1", "sigma1", "k2", "beta12", "beta2", "mu_y", "phi1", "phi2")
        for j, name in enumerate(names):
            writer.writerow(
                [name]
                + [
                    format(v, ".10g")
                    for v in (
                        result.if_cal[j], result.if_cal_se[j],
                        result.if_proxy[j], result.if_proxy_se[j],
                    )
                ]
            )
    (out / "sv_diagnostics.json").write_text(
        json.dumps(
            {
                "n_calibrated": result.n_calibrated,
                "sigma_at_n": result.sigma_at_n,
                "z_mean": d.mean,
                "z_variance": d.variance,
                "d_mean": d.d_mean,
                "d_var": d.d_var,
                "d_m3": d.d_m3,
                "d_m4": d.d_m4,
                "acc_calibrated": result.acc_cal,
                "acc_proxy": result.acc_proxy,
            },
            indent=1,
        )
    )
    print(f"sv-study: N={result.n_calibrated}, wrote {out / 'sv_study.csv'}")
    return 0


@_command(
    "calibrate",
    {
        **_COMMON,
        "n_obs": (int, 300),
        "data_seed": (int, 1),
        "n_grid": (tuple, studies.AR1_N_GRID),
        "reps": (int, 500),
    },
)
def cmd_calibrate(cfg):
    """Noise-scale calibration table for the AR(1) model."""
    out = _outdir(cfg, "calibrate")
    model = ssm.Ar1Model()
    y, _ = ssm.simulate_ar1(model, cfg["n_obs"], cfg["data_seed"])
    exact = ssm.kalman_loglik(model, y)

    def runner(n_particles, rng):
        return ssm.pf_loglik_adapted(model, y, n_particles, rng).value

    table = cal.calibration_table(
        runner,
        [int(n) for n in cfg["n_grid"]],
        cfg["reps"],
        cfg["seed"],
        theta_ref=np.array([model.phi, model.mu_x, math.sqrt(model.sigma_x2)]),
        exact_loglik=exact,
    )
    table.to_csv(out / "calibration.csv")
    for p in table.points:
        print(f"N={p.n_particles:4d}  sigma_hat={p.sigma_hat:.4f} (se {p.se:.4f})")
    print(f"calibrate: wrote {out / 'calibration.csv'}")
    return 0


@_command(
    "oracle-verify",
    {**_COMMON, "n_specs": (int, 100)},
)
def cmd_oracle_verify(cfg):
    """Randomized finite-state verification battery."""
    out = _outdir(cfg, "oracle-verify")
    try:
        results = oracle.run_battery(n_specs=cfg["n_specs"], seed=cfg["seed"])
    except AssertionError as exc:
        print(f"oracle-verify: FAILED\n{exc}", file=sys.stderr)
        return _fail(out, "oracle-verify", assertion=str(exc))
    worst = max(t.residual for t, _ in results)
    with open(out / "battery.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["spec", "decoupling_residual", "tensor_residual", "variance_residual",
             "rif_q", "rif_q_star", "ordering_ok", "peskun_ok"]
        )
        for i, (terms, report) in enumerate(results):
            writer.writerow(
                [i, f"{terms.residual:.3e}", f"{terms.tensor_residual:.3e}",
                 f"{terms.variance_identity_residual:.3e}", f"{report.rif_q:.6g}",
                 f"{report.rif_q_star:.6g}", report.ordering_ok, report.peskun_ok]
            )
    print(f"oracle-verify: {len(results)}/{cfg['n_specs']} configurations verified "
          f"(worst identity residual {worst:.2e})")
    return 0


@_command(
    "arif-compare",
    {
        **_COMMON,
        "l_values": (tuple, (0.5, 1.0, 2.5, 10.0)),
        "sigma_min": (float, 0.3),
        "sigma_max": (float, 3.5),
        "sigma_step": (float, 0.01),
    },
)
def cmd_arif_compare(cfg):
    """Random-walk-limit computing time against the inefficient-proposal bound."""
    out = _outdir(cfg, "arif-compare")
    sigmas = np.round(
        np.arange(cfg["sigma_min"], cfg["sigma_max"] + 0.5 * cfg["sigma_step"],
                  cfg["sigma_step"]),
        10,
    )
    with open(out / "arif_compare.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma", "bound_id", "if_param", "value"])
        for sigma in sigmas:
            writer.writerow(
                [format(sigma, ".17g"), "lrct2", "", format(bd.rct(bd.lrif2(sigma), sigma), ".17g")]
            )
            for l in cfg["l_values"]:
                writer.writerow(
                    [format(sigma, ".17g"), "arct", format(l, "g"),
                     format(bd.arct(sigma, l), ".17g")]
                )
    try:
        series = [("lrct2", sigmas, [bd.rct(bd.lrif2(s), s) for s in sigmas])]
        for l in cfg["l_values"]:
            series.append((f"l={l:g}", sigmas, [bd.arct(s, l) for s in sigmas]))
        line_plot_svg(
            out / "arif_compare.svg",
            series,
            title="computing time: random-walk limit vs lower bound",
            xlabel="sigma",
            ylabel="RCT",
        )
    except Exception:
        pass
    print(f"arif-compare: wrote {out / 'arif_compare.csv'}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="pmtune",
        description="Tuning the sample count of pseudo-marginal Metropolis-Hastings.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="flat key = value configuration file")
    args, extra = parser.parse_known_args(argv)

    raw = {}
    if args.config:
        raw.update(_parse_config_file(args.config))
    key = None
    for token in extra:
        if token.startswith("--"):
            if key is not None:
                raw[key] = "true"  # bare flag
            key = token[2:].replace("-", "_")
        else:
            if key is None:
                raise SystemExit(f"unexpected argument {token!r}")
            raw[key] = token
            key = None
    if key is not None:
        raw[key] = "true"

    fn, schema = _COMMANDS[args.command]
    cfg = _coerce(schema, raw)
    try:
        return fn(cfg)
    except Exception as exc:  # noqa: BLE001 - surface with context, nonzero exit
        out = Path(cfg["outdir"]) / args.command
        out.mkdir(parents=True, exist_ok=True)
        (out / "failure.json").write_text(
            json.dumps(
                {"command": args.command, "error": str(exc),
                 "traceback": traceback.format_exc()},
                indent=1,
            )
        )
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
