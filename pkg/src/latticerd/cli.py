"""Command-line interface.

Subcommands:

* ``sample``   — draw T realizations from a model JSON into raw binaries;
* ``fit``      — tile, cluster, and fit a piecewise model from a batch;
* ``diagnose`` — probe Gaussianity test, second-order summaries, AIC/BIC
  model comparison;
* ``bounds``   — rate-distortion curves (``approx`` mode) or full Monte
  Carlo achievability/converse curves over scaled lattices (``full``).

Flags override values from ``--config`` (JSON); every run writes its
resolved configuration, seed, backend, and tool version next to the
outputs, and reruns with the same configuration are byte-identical.

Exit codes: 0 success, 2 usage/configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__, modelio, tiling
from ._backend import backend_name
from .bounds import BoundConfig, bound_curve, write_bound_curve_csv
from .diagnostics import (
    empirical_second_order,
    gaussianity_decision,
    model_selection,
)
from .errors import (
    BudgetError,
    ConfigError,
    DegenerateSample,
    DistortionOutOfRange,
    DomainError,
    EmbeddingError,
    LabelError,
    LatticeRDError,
    MissingLag,
    NotPSD,
    ShapeError,
    ShapeMismatch,
    SizeError,
)
from .field_model import CovarianceKernel, build_field, validate_field
from .sampler import sample_field
from .waterfill import rd_curve, write_rd_curve_csv

USAGE_ERRORS = (
    ConfigError,
    SizeError,
    ShapeError,
    ShapeMismatch,
    MissingLag,
    LabelError,
    FileNotFoundError,
)
NUMERICAL_ERRORS = (
    NotPSD,
    EmbeddingError,
    DomainError,
    BudgetError,
    DistortionOutOfRange,
    RuntimeError,
    FloatingPointError,
)


def _load_config_file(path):
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def _resolve(args, config, key, default=None):
    """Flag value if given, else config file value, else default."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    if key in config:
        return config[key]
    return default


def _write_resolved(out_dir, command, resolved):
    resolved = dict(resolved)
    resolved.update(
        {
            "command": command,
            "tool_version": __version__,
            "backend": backend_name(),
            "threads_env": os.environ.get("LATTICERD_THREADS"),
        }
    )
    os.makedirs(out_dir, exist_ok=True)
    modelio.dump_json(resolved, os.path.join(out_dir, "resolved_config.json"))
    return resolved


def cmd_sample(args):
    config = _load_config_file(args.config)
    model_path = _resolve(args, config, "model")
    out = _resolve(args, config, "out")
    T = int(_resolve(args, config, "T", 1))
    seed = int(_resolve(args, config, "seed", 0))
    dtype = _resolve(args, config, "dtype", "float64")
    pad = int(_resolve(args, config, "pad_factor", 1))
    if not model_path or not out:
        raise ConfigError("sample requires --model and --out")
    if T < 1:
        raise ConfigError("T must be >= 1")

    field = modelio.load_model(model_path)
    report = validate_field(field)
    if not report.ok:
        msgs = "; ".join(f"{v.code} ({v.where}): {v.message}" for v in report.violations)
        raise ConfigError(f"model failed validation: {msgs}")

    _write_resolved(
        out,
        "sample",
        {"model": model_path, "out": out, "T": T, "seed": seed, "dtype": dtype, "pad_factor": pad},
    )
    batch = sample_field(field, T, seed, pad_factor=pad)
    modelio.save_batch(batch, out, dtype=dtype, model_doc=modelio.model_to_json(field))
    print(f"wrote {T} realization(s) to {out}")
    return 0


def cmd_fit(args):
    config = _load_config_file(args.config)
    batch_dir = _resolve(args, config, "batch")
    out = _resolve(args, config, "out")
    k = int(_resolve(args, config, "k", 16))
    K_range = _resolve(args, config, "K_range", [1, 2, 3, 4, 5, 6])
    seed = int(_resolve(args, config, "seed", 0))
    if not batch_dir or not out:
        raise ConfigError("fit requires --batch and --out")

    batch = modelio.load_batch(batch_dir)
    _write_resolved(
        out,
        "fit",
        {"batch": batch_dir, "out": out, "k": k, "K_range": list(K_range), "seed": seed},
    )
    result = tiling.fit_pipeline(batch, k, K_range, seed=seed)
    modelio.save_model(result.field, os.path.join(out, "model.json"))
    tiling.write_label_pgm(result.field, os.path.join(out, "labels.pgm"))
    modelio.dump_json(
        {
            "chosen_K": result.chosen_K,
            "log_L": result.log_L,
            "q": result.q,
            "tile_labels": [int(v) for v in result.tile_labels],
            "trace": list(result.trace),
        },
        os.path.join(out, "fit_trace.json"),
    )
    print(f"fitted K={result.chosen_K} model -> {out}/model.json")
    return 0


def cmd_diagnose(args):
    config = _load_config_file(args.config)
    batch_dir = _resolve(args, config, "batch")
    out = _resolve(args, config, "out")
    J = int(_resolve(args, config, "J", 200))
    alpha = float(_resolve(args, config, "alpha", 0.05))
    delta = float(_resolve(args, config, "delta", 0.05))
    support = int(_resolve(args, config, "probe_support", 64))
    tile_size = int(_resolve(args, config, "tile_size", 8))
    K_range = _resolve(args, config, "K_range", [1, 2, 3, 4])
    seed = int(_resolve(args, config, "seed", 0))
    if not batch_dir or not out:
        raise ConfigError("diagnose requires --batch and --out")

    batch = modelio.load_batch(batch_dir)
    _write_resolved(
        out,
        "diagnose",
        {
            "batch": batch_dir,
            "out": out,
            "J": J,
            "alpha": alpha,
            "delta": delta,
            "probe_support": support,
            "tile_size": tile_size,
            "K_range": list(K_range),
            "seed": seed,
        },
    )
    probe = gaussianity_decision(
        batch, J, alpha=alpha, delta=delta, probe_support_size=min(support, batch.fields[0].lattice.n), seed=seed
    )
    second = empirical_second_order(batch)
    selection = model_selection(batch, tile_size=tile_size, K_range=K_range, seed=seed)

    doc = {
        "probe_report": {
            "J": probe.J,
            "pi_hat": probe.pi_hat,
            "alpha": probe.alpha,
            "delta": probe.delta,
            "decision": probe.decision,
            "excluded_probes": list(probe.excluded_probes),
            "p_values": [float(p) for p in probe.p_values],
            "p_bh": [float(p) for p in probe.p_bh],
        },
        "second_order": {
            "stationarity": second.stationarity_flag,
            "isotropy": second.isotropy_flag,
            "stats": second.stats,
            "radial_profile": [
                {"l": l, "C_bar": c, "count": m} for l, c, m in second.radial_profile
            ],
        },
        "model_scores": [
            {
                "model_id": s.model_id,
                "q": s.q,
                "log_L": s.log_L,
                "aic": s.aic,
                "bic": s.bic,
                "n_eff": s.n_eff,
                "extras": s.extras,
            }
            for s in selection.scores
        ],
        "excluded_models": [list(e) for e in selection.excluded],
    }
    modelio.dump_json(doc, os.path.join(out, "diagnostics.json"))
    with open(os.path.join(out, "radial_profile.csv"), "w", encoding="utf-8") as fh:
        fh.write("l,C_bar,count\n")
        for l, c, m in second.radial_profile:
            fh.write(f"{l},{format(c, '.12g')},{m}\n")
    print(f"diagnostics -> {out} (decision: {probe.decision})")
    return 0


def _scaled_family(field, scales):
    """Self-similar lattice family: dims and kernel length scales grow
    together and labels replicate blockwise, keeping region weights fixed."""
    fams = []
    labels = field.partition.labels.reshape(field.lattice.dims)
    for s in scales:
        s = int(s)
        if s < 1:
            raise ConfigError("scales must be positive integers")
        if s == 1:
            fams.append(field)
            continue
        big = labels
        for axis in range(labels.ndim):
            big = np.repeat(big, s, axis=axis)
        params = []
        for region in field.regions:
            kern = region.kernel
            if kern.kind == "tabulated":
                raise ConfigError("cannot scale a tabulated kernel; use scale 1")
            scaled = CovarianceKernel(
                kind=kern.kind,
                variance=kern.variance,
                length_scale=None if kern.length_scale is None else kern.length_scale * s,
            )
            params.append((region.mean, scaled))
        dims = tuple(d * s for d in field.lattice.dims)
        fams.append(build_field(dims, big.ravel(), params, spectrum_method="bccb"))
    return fams


def cmd_bounds(args):
    config = _load_config_file(args.config)
    model_path = _resolve(args, config, "model")
    out = _resolve(args, config, "out")
    D_grid = _resolve(args, config, "D")
    epsilon = float(_resolve(args, config, "epsilon", 0.05))
    mode = _resolve(args, config, "mode", "approx")
    scales = _resolve(args, config, "scales", [1])
    mc_samples = int(_resolve(args, config, "mc_samples", 100_000))
    inner_samples = int(_resolve(args, config, "inner_samples", 1000))
    workers = int(_resolve(args, config, "workers", 4))
    rate_tol_bits = float(_resolve(args, config, "rate_tol_bits", 0.005))
    seed = int(_resolve(args, config, "seed", 0))
    svg = bool(_resolve(args, config, "svg", False))
    if not model_path or not out:
        raise ConfigError("bounds requires --model and --out")
    if D_grid is None:
        raise ConfigError("bounds requires --D (one or more values)")
    D_grid = [float(v) for v in (D_grid if isinstance(D_grid, (list, tuple)) else [D_grid])]
    if mode not in ("approx", "full"):
        raise ConfigError(f"unknown mode {mode!r}")

    field = modelio.load_model(model_path)
    _write_resolved(
        out,
        "bounds",
        {
            "model": model_path,
            "out": out,
            "D": D_grid,
            "epsilon": epsilon,
            "mode": mode,
            "scales": list(scales),
            "mc_samples": mc_samples,
            "inner_samples": inner_samples,
            "workers": workers,
            "rate_tol_bits": rate_tol_bits,
            "seed": seed,
            "svg": svg,
        },
    )

    if mode == "approx":
        points = rd_curve(field, D_grid, epsilon)
        csv_path = os.path.join(out, "rd_curve.csv")
        write_rd_curve_csv(points, csv_path)
        if svg:
            xs = [p.D for p in points if not math.isnan(p.rate_bits_per_site)]
            ys = [p.rate_bits_per_site for p in points if not math.isnan(p.rate_bits_per_site)]
            _write_svg_chart(
                os.path.join(out, "rd_curve.svg"),
                [("rate", xs, ys)],
                x_label="D",
                y_label="bits/site",
                log_x=False,
            )
        print(f"rd curve ({len(points)} point(s)) -> {csv_path}")
        return 0

    family = _scaled_family(field, scales)
    cfg = BoundConfig(
        mc_samples=mc_samples,
        inner_samples=inner_samples,
        seed=seed,
        workers=workers,
        epsilon=epsilon,
        rate_tol_bits=rate_tol_bits,
    )
    points = bound_curve(family, D_grid[0], epsilon, cfg)
    csv_path = os.path.join(out, "bound_curve.csv")
    write_bound_curve_csv(points, csv_path, epsilon, D_grid[0], seed)
    if svg:
        ns = [p.n for p in points]
        _write_svg_chart(
            os.path.join(out, "bound_curve.svg"),
            [
                ("achievability", ns, [p.rate_ach for p in points]),
                ("approximation", ns, [p.rate_approx for p in points]),
                ("converse", ns, [p.rate_conv for p in points]),
            ],
            x_label="n",
            y_label="bits/site",
            log_x=True,
        )
    print(f"bound curve ({len(points)} point(s)) -> {csv_path}")
    return 0


def _write_svg_chart(path, series, x_label, y_label, log_x=False, width=640, height=420):
    """Minimal deterministic polyline chart; the CSV stays the contract."""
    margin = 60
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]

    def tx(v):
        v = math.log10(v) if log_x else v
        lo = min(math.log10(x) if log_x else x for x in xs_all)
        hi = max(math.log10(x) if log_x else x for x in xs_all)
        span = hi - lo or 1.0
        return margin + (v - lo) / span * (width - 2 * margin)

    def ty(v):
        lo, hi = min(ys_all), max(ys_all)
        span = hi - lo or 1.0
        return height - margin - (v - lo) / span * (height - 2 * margin)

    colors = ("#1f77b4", "#2ca02c", "#d62728", "#9467bd")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{x_label}</text>',
        f'<text x="16" y="{height / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13" transform="rotate(-90 16 {height / 2:.1f})">{y_label}</text>',
    ]
    for i, (name, xs, ys) in enumerate(series):
        pts = " ".join(f"{tx(x):.2f},{ty(y):.2f}" for x, y in zip(xs, ys))
        color = colors[i % len(colors)]
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 16 * i}" font-family="sans-serif" '
            f'font-size="11" fill="{color}" text-anchor="end">{name}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="latticerd",
        description="Finite-blocklength rate-distortion limits for piecewise "
        "homogeneous Gaussian fields",
    )
    parser.add_argument("--version", action="version", version=f"latticerd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw realizations from a model JSON")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--T", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--pad-factor", dest="pad_factor", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fit", help="fit a piecewise model from a batch")
    p.add_argument("--batch")
    p.add_argument("--out")
    p.add_argument("--k", type=int)
    p.add_argument("--K-range", dest="K_range", type=int, nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", help="Gaussianity, second-order, model comparison")
    p.add_argument("--batch")
    p.add_argument("--out")
    p.add_argument("--J", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--probe-support", dest="probe_support", type=int)
    p.add_argument("--tile-size", dest="tile_size", type=int)
    p.add_argument("--K-range", dest="K_range", type=int, nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("bounds", help="rate-distortion limit curves")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--D", type=float, nargs="+")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--mode", choices=("approx", "full"))
    p.add_argument("--scales", type=int, nargs="+")
    p.add_argument("--mc-samples", dest="mc_samples", type=int)
    p.add_argument("--inner-samples", dest="inner_samples", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--rate-tol-bits", dest="rate_tol_bits", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--svg", action="store_const", const=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv=None):
    if os.environ.get("LATTICERD_THREADS") and backend_name() == "numba":
        try:
            import numba

            numba.set_num_threads(max(1, int(os.environ["LATTICERD_THREADS"])))
        except (ValueError, ImportError):
            pass
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except LatticeRDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
