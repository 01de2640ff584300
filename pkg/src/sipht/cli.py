"""Command-line entry point: ``sipht <command> ...``.

Commands
--------
simulate   propagate one sequence and write the Bloch trajectory
sweep      magnetometry curve over p_offset / bs_mod (or a fig3/fig5 style sweep)
fit        estimate b_s and delta from a curve CSV
fig2 .. fig5   figure reproductions

Configs are JSON (see README); ``--set block.key=value`` overrides single
entries, with ``value`` parsed as JSON when possible. Worker count for sweeps
comes from ``--workers`` or the ``SIPHT_WORKERS`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from pathlib import Path

from .analytic import ContrastCurve, ReadoutModel, SweepSpec, phi_nv_analytic
from .estimation import (
    FitError,
    NoNullError,
    bs_bounds_from_curve,
    count_local_maxima,
    delta_from_symmetry,
    fit_contrast_curve,
)
from .fields import GAMMA_NV, dump_config, field_config_from_dict, modulation_from_dict
from .propagator import IntegrationError, contrast_from_trajectory, propagate, propagator_options_from_dict
from .scenarios import (
    FIG3_RATIOS,
    MHZ,
    fig3_pairs,
    run_fig2,
    run_fig3,
    run_fig4a,
    run_fig4b,
    run_fig5,
    scenario_from_dict,
    write_json,
    write_table,
)
from .sequences import sequence_from_dict

log = logging.getLogger("sipht")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    out = json.loads(json.dumps(config))
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_value(value)
    return out


def read_config(path: str | None, overrides: list[str]) -> dict:
    raw = {}
    if path:
        raw = json.loads(Path(path).read_text())
    raw = apply_overrides(raw, overrides)
    if "field" not in raw:
        raise ValueError("config needs a 'field' block (use --config or --set field.b_d=...)")
    # validate early; raises ValueError on bad keys
    field_config_from_dict(raw["field"])
    modulation_from_dict(raw.get("modulation", {}))
    return raw


def _outdir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _options(raw: dict) -> PropagatorOptions:
    return propagator_options_from_dict(raw.get("propagator", {}))


def cmd_simulate(args) -> int:
    raw = read_config(args.config, args.set)
    cfg = field_config_from_dict(raw["field"])
    mod = modulation_from_dict(raw.get("modulation", {}))
    readout = ReadoutModel(**raw.get("readout", {}))
    seq_block = dict(raw.get("sequence", {"kind": "hahn", "n_pi": 1, "idealized": True}))
    seq_block.setdefault("varphi", readout.varphi)
    seq = sequence_from_dict(seq_block, cfg)
    traj = propagate(seq, cfg, mod, _options(raw))
    out = _outdir(args.out)
    traj.to_csv(out / "trajectory.csv")
    summary = {
        "phi_nv": traj.phi_nv,
        "phi_nv_analytic": phi_nv_analytic(cfg, mod, seq.sensing_periods, seq.p_offset),
        "contrast": contrast_from_trajectory(traj, readout),
        "z_final": traj.z_final,
        "config": json.loads(dump_config(raw)),
    }
    write_json(out / "summary.json", summary)
    print(json.dumps({k: summary[k] for k in ("phi_nv", "phi_nv_analytic", "contrast")}))
    return 0


def cmd_sweep(args) -> int:
    raw = read_config(args.config, args.set)
    out = _outdir(args.out)
    sweep = raw.get("sweep", {"parameter": "p_offset", "start": 0.0, "stop": 2 * math.pi,
                              "count": 128, "endpoint": False})
    if sweep["parameter"] in ("p_offset", "bs_mod"):
        sc = scenario_from_dict(raw)
        curve = sc.run(opts=_options(raw), workers=args.workers)
        curve.to_csv(out / f"{sc.name}.csv")
        print(out / f"{sc.name}.csv")
        return 0
    spec = SweepSpec(**sweep)
    cfg = raw["field"]
    seq = raw.get("sequence", {})
    if spec.parameter == "bd_over_omega":
        pairs = [(cfg["b_d"], GAMMA_NV * cfg["b_d"] / r) for r in spec.values()]
        rows = run_fig3(pairs, f_d=cfg["f_d"], mode=raw.get("mode", "numeric_finite"),
                        p=seq.get("p", math.pi / 2), opts=_options(raw), workers=args.workers)
        write_table(out / "bd_over_omega.csv", rows)
    else:
        res = run_fig5(distances=spec.values(), b_d=cfg["b_d"], f_d=cfg["f_d"])
        write_json(out / "distance.json", res)
    return 0


def cmd_fit(args) -> int:
    curve = ContrastCurve.from_csv(args.curve)
    result = fit_contrast_curve(curve, leakage=args.leakage)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sym = delta_from_symmetry(curve)
    lo, hi = bs_bounds_from_curve(curve)
    report = result.to_dict()
    report.update(
        delta_symmetry=sym,
        eta=count_local_maxima(curve.contrast),
        bs_bounds=[lo, hi],
        warnings=[str(w.message) for w in caught],
    )
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_fig2(args) -> int:
    out = _outdir(args.out)
    omegas = [args.omega * MHZ] if args.omega else [9.6 * MHZ, 2.8 * MHZ]
    for om in omegas:
        sipht, conv = run_fig2(om, n_points=args.points, mode=args.mode, workers=args.workers)
        tag = f"{om / MHZ:g}MHz"
        sipht.to_csv(out / f"fig2_sipht_{tag}.csv")
        conv.to_csv(out / f"fig2_conventional_{tag}.csv")
    return 0


def cmd_fig3(args) -> int:
    out = _outdir(args.out)
    rows = run_fig3(fig3_pairs(args.ratios), n_points=args.points, mode=args.mode, workers=args.workers)
    write_table(out / "fig3.csv", rows)
    for r in rows:
        print(f"gamma*B_D/Omega={r['drive_over_rabi']:.3f}  ratio={r['ratio']:.3f}")
    return 0


def cmd_fig4a(args) -> int:
    out = _outdir(args.out)
    res = run_fig4a(mismatch=args.mismatch, n_points=args.points, mode=args.mode, workers=args.workers)
    for name, curve in res["curves"].items():
        curve.to_csv(out / f"fig4a_{name}.csv")
    write_json(out / "fig4a.json", {k: v for k, v in res.items() if k != "curves"})
    print(f"leakage={res['leakage']:.3e}  rejection={100 * res['rejection']:.4f}%")
    return 0


def cmd_fig4b(args) -> int:
    out = _outdir(args.out)
    rows = run_fig4b(seeds=args.seeds, noise_std=args.noise, mode=args.mode)
    write_table(out / "fig4b.csv", rows)
    worst = max(abs(r["mean_error"]) for r in rows)
    print(f"max |mean delta error| = {math.degrees(worst):.4f} deg")
    return 0


def cmd_fig5(args) -> int:
    out = _outdir(args.out)
    res = run_fig5(noise_std=args.noise)
    write_json(out / "fig5.json", res)
    for m in res["materials"]:
        print(f"{m['material']}: delta = {m['delta_hat'] / (2 * math.pi):.4f} * 2pi")
    fit = res["dipolar_fit"]
    print(f"dipolar fit: A={fit.amplitude:.4e} T m^3, d0={fit.d0_hat * 1e3:.4f} mm; "
          f"free exponent {res['power_law_fit'].exponent:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sipht", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON config file")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("simulate", help="propagate one sequence")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="parameter sweep")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="fit a contrast curve CSV")
    p.add_argument("curve")
    p.add_argument("--leakage", type=float, default=None, help="known b_d - b_d_mod (T)")
    p.add_argument("--out", default=None, help="write FitResult JSON here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("fig2")
    common(p, config=False)
    p.add_argument("--omega", type=float, default=None, help="Rabi strength in MHz (x 2pi)")
    p.add_argument("--points", type=int, default=181)
    p.add_argument("--mode", default="numeric_finite")
    p.set_defaults(func=cmd_fig2)

    p = sub.add_parser("fig3")
    common(p, config=False)
    p.add_argument("--ratios", type=float, nargs="+", default=list(FIG3_RATIOS))
    p.add_argument("--points", type=int, default=32)
    p.add_argument("--mode", default="numeric_finite")
    p.set_defaults(func=cmd_fig3)

    p = sub.add_parser("fig4a")
    common(p, config=False)
    p.add_argument("--mismatch", type=float, default=0.0)
    p.add_argument("--points", type=int, default=720)
    p.add_argument("--mode", default="numeric_finite")
    p.set_defaults(func=cmd_fig4a)

    p = sub.add_parser("fig4b")
    common(p, config=False)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--mode", default="analytic")
    p.set_defaults(func=cmd_fig4b)

    p = sub.add_parser("fig5")
    common(p, config=False)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_fig5)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, FitError, NoNullError, IntegrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
