"""Command-line interface.

Subcommands: dataset, simulate, fit, study, extract, plot.  Every
subcommand accepts --config FILE with plain ``key=value`` lines (``#``
comments allowed); explicit flags win over the file, the file wins over
built-in defaults.  Outputs are written atomically and text outputs carry
the hash of the resolved configuration, so a rerun with the same
configuration and seed reproduces files byte for byte.
"""

import argparse
import hashlib
import io
import os
import sys
import tempfile

import numpy as np

from .covariance import assemble, simulate
from .datasets import mercer_hall_straw_path
from .diagnostics import info_criteria, morans_i, residuals
from .estimation import FitConfig, McmcConfig, fit, mcmc_fit, standard_errors
from .extensions import SelectionMap, SignalNoiseSpec, extract_signal
from .lattice import load_csv
from .model import CepstralGrid
from .objectives import model_acf


# ---------------------------------------------------------------------------
# config plumbing


def _read_config_file(path):
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _coerce(text, kind):
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise SystemExit(f"cannot read {text!r} as a boolean")
    if kind in (int, float):
        return kind(text)
    return text


def _resolve(args, spec):
    """Merge CLI flags, config file, and defaults into one dict."""
    file_cfg = _read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(file_cfg) - set(spec)
    if unknown:
        raise SystemExit(f"unknown config keys: {', '.join(sorted(unknown))}")
    resolved = {}
    for key, (default, kind) in spec.items():
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            resolved[key] = cli_value
        elif key in file_cfg:
            resolved[key] = _coerce(file_cfg[key], kind)
        else:
            resolved[key] = default
    return resolved


def _config_hash(resolved):
    # output destinations do not affect what is computed, so two runs of the
    # same configuration into different directories share a fingerprint
    keys = sorted(k for k in resolved if k not in ("out", "out_dir"))
    text = "\n".join(f"{k}={resolved[k]}" for k in keys)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _atomic_write_text(path, text):
    _atomic_write_bytes(path, text.encode())


def _atomic_write_bytes(path, data):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _lattice_csv_text(values, header):
    buf = io.StringIO()
    buf.write(header + "\n")
    for row in values:
        buf.write(",".join(f"{v:.10g}" for v in row) + "\n")
    return buf.getvalue()


def _parse_mask(spec_str, p):
    if spec_str in (None, "", "none"):
        return None
    side = 2 * p + 1
    mask = np.zeros((side, side), dtype=bool)

    def block(j, k):
        mask[j + p, k + p] = True
        mask[-j + p, -k + p] = True

    if spec_str == "separable":
        for j in range(-p, p + 1):
            for k in range(-p, p + 1):
                if j != 0 and k != 0:
                    block(j, k)
    elif spec_str == "quadrant":
        for j in range(-p, 0):
            for k in range(1, p + 1):
                block(j, k)
    elif spec_str.startswith("pairs:"):
        body = spec_str[len("pairs:") :]
        for chunk in body.split(";"):
            if not chunk:
                continue
            try:
                j, k = (int(t) for t in chunk.split(","))
            except ValueError:
                raise SystemExit(f"bad mask pair {chunk!r}; expected j,k integers")
            if (j, k) == (0, 0):
                raise SystemExit("cannot mask the origin coefficient")
            if abs(j) > p or abs(k) > p:
                raise SystemExit(f"mask pair ({j},{k}) outside order p={p}")
            block(j, k)
    else:
        raise SystemExit(
            f"unknown mask {spec_str!r}; use none, separable, quadrant, or pairs:j,k;..."
        )
    return mask


def _parse_beta(text, n_cols_expected):
    if text in (None, ""):
        return np.zeros(n_cols_expected)
    values = np.array([float(t) for t in text.split(",")])
    if values.size != n_cols_expected:
        raise SystemExit(
            f"beta has {values.size} entries but the design has {n_cols_expected} columns"
        )
    return values


def _heatmap(values, path, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4.8))
    im = ax.imshow(values, cmap="viridis", aspect="equal")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(title)
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=150, bbox_inches="tight")
    plt.close(fig)
    _atomic_write_bytes(path, buf.getvalue())


# ---------------------------------------------------------------------------
# subcommands


def cmd_dataset(args):
    spec = {"out": ("straw.csv", str)}
    cfg = _resolve(args, spec)
    data = mercer_hall_straw_path().read_bytes()
    _atomic_write_bytes(cfg["out"], data)
    print(f"wrote {cfg['out']}")
    return 0


_SIM_SPEC = {
    "grid_file": (None, str),
    "rows": (20, int),
    "cols": (25, int),
    "design": ("none", str),
    "beta": ("", str),
    "seed": (0, int),
    "reps": (1, int),
    "out_dir": ("sim_out", str),
    "mesh_order": (200, int),
    "route": ("mesh", str),
    "truncation": (25, int),
}


def _simulate_lattices(cfg):
    if not cfg["grid_file"]:
        raise SystemExit("simulate needs grid_file (text matrix with a p= header)")
    grid = CepstralGrid.load(cfg["grid_file"])
    from .lattice import build_design

    X, _ = build_design(cfg["rows"], cfg["cols"], cfg["design"])
    beta = _parse_beta(cfg["beta"], X.shape[1])
    mean = X @ beta if X.shape[1] else np.zeros(cfg["rows"] * cfg["cols"])
    acf = model_acf(
        grid,
        max(cfg["rows"], cfg["cols"]) - 1,
        route=cfg["route"],
        mesh_order=cfg["mesh_order"],
        K=cfg["truncation"],
    )
    cov = assemble(acf, cfg["rows"], cfg["cols"])
    for rep in range(cfg["reps"]):
        yield rep, simulate(cov, mean, seed=[cfg["seed"], rep])


def cmd_simulate(args):
    cfg = _resolve(args, _SIM_SPEC)
    h = _config_hash(cfg)
    for rep, lattice in _simulate_lattices(cfg):
        path = os.path.join(cfg["out_dir"], f"rep_{rep:03d}.csv")
        _atomic_write_text(path, _lattice_csv_text(lattice, f"# config {h} rep {rep}"))
    manifest = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg)) + f"\nconfig_hash={h}\n"
    _atomic_write_text(os.path.join(cfg["out_dir"], "manifest.txt"), manifest)
    print(f"wrote {cfg['reps']} replicate(s) to {cfg['out_dir']} (config {h})")
    return 0


_FIT_SPEC = {
    "data": (None, str),
    "design": ("none", str),
    "p": (1, int),
    "mask": ("none", str),
    "method": ("mle", str),
    "mesh_order": (200, int),
    "route": ("mesh", str),
    "truncation": (25, int),
    "out_dir": ("fit_out", str),
    "plots": (False, bool),
    "mcmc_iters": (20000, int),
    "proposal_scale": (0.05, float),
    "prior_sd": (10.0, float),
    "seed": (0, int),
}


def cmd_fit(args):
    cfg = _resolve(args, _FIT_SPEC)
    if not cfg["data"]:
        raise SystemExit("fit needs data (a lattice CSV)")
    h = _config_hash(cfg)
    sample = load_csv(cfg["data"], design_spec=cfg["design"])
    mask = _parse_mask(cfg["mask"], cfg["p"])
    if cfg["method"] == "bayes":
        mconfig = McmcConfig(
            n_iter=cfg["mcmc_iters"],
            proposal_scale=cfg["proposal_scale"],
            prior_sd=cfg["prior_sd"],
            seed=cfg["seed"],
            route=cfg["route"],
            mesh_order=cfg["mesh_order"],
            truncation=cfg["truncation"],
        )
        result = mcmc_fit(sample, cfg["p"], mask=mask, config=mconfig)
    else:
        fconfig = FitConfig(
            route=cfg["route"],
            mesh_order=cfg["mesh_order"],
            truncation=cfg["truncation"],
        )
        result = fit(sample, cfg["p"], mask=mask, method=cfg["method"], config=fconfig)
        standard_errors(result, sample, config=fconfig)

    lines = [f"# config {h}", result.report_text().rstrip()]
    white, moran = residuals(result, sample)
    if result.method == "mle":
        ic = info_criteria(result)
        lines.append(
            f"criteria: aic {ic.aic:.3f}  bic {ic.bic:.3f}  hq {ic.hq:.3f}  (k={ic.k}, n={ic.n})"
        )
    lines.append(
        f"residual_moran: I {moran.statistic:.4f}  z {moran.zscore:.3f}  p {moran.pvalue:.4g}"
    )
    report = "\n".join(lines) + "\n"
    out = cfg["out_dir"]
    _atomic_write_text(os.path.join(out, "report.txt"), report)

    payload = result.to_dict()
    payload["config_hash"] = h
    payload["residual_moran_p"] = moran.pvalue
    import json

    _atomic_write_text(os.path.join(out, "result.json"), json.dumps(payload, indent=2))
    _atomic_write_text(
        os.path.join(out, "residuals.csv"),
        _lattice_csv_text(white, f"# config {h} whitened residuals"),
    )
    if result.draws is not None:
        buf = io.StringIO()
        result.save_draws(buf)
        _atomic_write_text(os.path.join(out, "draws.csv"), buf.getvalue())
    if cfg["plots"]:
        _heatmap(sample.values, os.path.join(out, "data.png"), "observed lattice")
        _heatmap(white, os.path.join(out, "residuals.png"), "whitened residuals")
    print(report, end="")
    print(f"wrote report to {out} (config {h})")
    return 0


_STUDY_SPEC = dict(_SIM_SPEC)
_STUDY_SPEC.update(
    {
        "reps": (30, int),
        "p": (1, int),
        "mask": ("none", str),
        "method": ("mle", str),
        "workers": (1, int),
        "out_dir": ("study_out", str),
    }
)


def _study_replicate(theta_matrix, cfg, mask, rep):
    """One simulate-and-fit pass; module level so worker processes can import it."""
    from .lattice import LatticeSample, build_design

    grid = CepstralGrid.from_matrix(theta_matrix)
    rows, cols = cfg["rows"], cfg["cols"]
    X, names = build_design(rows, cols, cfg["design"])
    beta = _parse_beta(cfg["beta"], X.shape[1])
    acf = model_acf(
        grid,
        max(rows, cols) - 1,
        route=cfg["route"],
        mesh_order=cfg["mesh_order"],
        K=cfg["truncation"],
    )
    cov = assemble(acf, rows, cols)
    mean = X @ beta if X.shape[1] else np.zeros(rows * cols)
    lattice = simulate(cov, mean, seed=[cfg["seed"], rep])
    sample = LatticeSample(values=lattice, design=X, design_names=names)
    fconfig = FitConfig(
        route=cfg["route"], mesh_order=cfg["mesh_order"], truncation=cfg["truncation"]
    )
    result = fit(sample, cfg["p"], mask=mask, method=cfg["method"], config=fconfig)
    return np.concatenate([result.theta.values, result.beta]), result.converged


def cmd_study(args):
    cfg = _resolve(args, _STUDY_SPEC)
    if not cfg["grid_file"]:
        raise SystemExit("study needs grid_file with the true coefficients")
    h = _config_hash(cfg)
    truth_grid = CepstralGrid.load(cfg["grid_file"])
    mask = _parse_mask(cfg["mask"], cfg["p"])
    fit_template = CepstralGrid.zeros(cfg["p"], mask=mask)
    from .lattice import build_design

    X, names = build_design(cfg["rows"], cfg["cols"], cfg["design"])
    beta_true = _parse_beta(cfg["beta"], X.shape[1])
    theta_true = []
    for j, k in fit_template.free_indices():
        if abs(j) <= truth_grid.p and abs(k) <= truth_grid.p:
            theta_true.append(truth_grid.value_at(j, k))
        else:
            theta_true.append(0.0)
    truths = np.concatenate([theta_true, beta_true])
    param_names = [f"theta({j},{k})" for j, k in fit_template.free_indices()] + list(names)

    mat = truth_grid.to_matrix()
    jobs = list(range(cfg["reps"]))
    if cfg["workers"] > 1:
        from joblib import Parallel, delayed

        outcomes = Parallel(n_jobs=cfg["workers"])(
            delayed(_try_study_replicate)(mat, cfg, mask, rep) for rep in jobs
        )
    else:
        outcomes = [_try_study_replicate(mat, cfg, mask, rep) for rep in jobs]

    rows = []
    failures = []
    for rep, outcome in zip(jobs, outcomes):
        if isinstance(outcome, str):
            failures.append(f"rep {rep}: {outcome}")
        else:
            params, converged = outcome
            if not converged:
                failures.append(f"rep {rep}: fit flagged non-converged; kept")
            rows.append(params)
    if not rows:
        raise SystemExit("every replicate failed; nothing to aggregate")
    est = np.array(rows)
    mean = est.mean(axis=0)
    sd = est.std(axis=0, ddof=1) if est.shape[0] > 1 else np.full(est.shape[1], np.nan)
    mse = np.mean((est - truths) ** 2, axis=0)

    buf = io.StringIO()
    buf.write(f"# config {h} replicates_used {est.shape[0]} of {cfg['reps']}\n")
    buf.write("parameter,true,mean,sd,mse\n")
    for name, t, m, s, e in zip(param_names, truths, mean, sd, mse):
        buf.write(f"{name},{t:.6f},{m:.6f},{s:.6f},{e:.6g}\n")
    _atomic_write_text(os.path.join(cfg["out_dir"], "study.csv"), buf.getvalue())
    text = [f"# config {h}", f"replicates: {est.shape[0]} used of {cfg['reps']}"]
    text.append(f"{'parameter':<14} {'true':>9} {'mean':>9} {'sd':>8} {'mse':>10}")
    for name, t, m, s, e in zip(param_names, truths, mean, sd, mse):
        text.append(f"{name:<14} {t:>9.4f} {m:>9.4f} {s:>8.4f} {e:>10.4g}")
    if failures:
        text.append("notes:")
        text.extend(f"  {f}" for f in failures)
    _atomic_write_text(os.path.join(cfg["out_dir"], "study.txt"), "\n".join(text) + "\n")
    print("\n".join(text))
    return 0


def _try_study_replicate(mat, cfg, mask, rep):
    try:
        return _study_replicate(mat, cfg, mask, rep)
    except Exception as exc:  # noqa: BLE001 - replicate failures must not kill the sweep
        return f"{type(exc).__name__}: {exc}"


_EXTRACT_SPEC = {
    "data": (None, str),
    "design": ("none", str),
    "signal_grid": (None, str),
    "noise_grid": (None, str),
    "beta": ("", str),
    "signal_mean_cols": ("", str),
    "mesh_order": (200, int),
    "route": ("mesh", str),
    "truncation": (25, int),
    "out_dir": ("extract_out", str),
}


def cmd_extract(args):
    cfg = _resolve(args, _EXTRACT_SPEC)
    for key in ("data", "signal_grid", "noise_grid"):
        if not cfg[key]:
            raise SystemExit(f"extract needs {key}")
    h = _config_hash(cfg)
    loaded = load_csv(cfg["data"], design_spec=cfg["design"], missing="mask")
    sample, keep = loaded
    selection = SelectionMap(keep=keep)
    L = sample.design.shape[1]
    beta = _parse_beta(cfg["beta"], L) if L else None
    assign = np.zeros(L, dtype=bool)
    if cfg["signal_mean_cols"]:
        for tok in cfg["signal_mean_cols"].split(","):
            assign[int(tok)] = True
    spec = SignalNoiseSpec(
        signal=CepstralGrid.load(cfg["signal_grid"]),
        noise=CepstralGrid.load(cfg["noise_grid"]),
        mean_assignment=assign,
    )
    result = extract_signal(
        sample,
        spec,
        selection=selection,
        beta=beta,
        route=cfg["route"],
        mesh_order=cfg["mesh_order"],
        K=cfg["truncation"],
    )
    out = cfg["out_dir"]
    _atomic_write_text(
        os.path.join(out, "signal_mean.csv"),
        _lattice_csv_text(result.mean, f"# config {h} signal conditional mean"),
    )
    _atomic_write_text(
        os.path.join(out, "signal_sd.csv"),
        _lattice_csv_text(result.sd, f"# config {h} signal conditional sd"),
    )
    print(f"wrote extraction to {out} (config {h})")
    return 0


def cmd_plot(args):
    spec = {"data": (None, str), "out": ("lattice.png", str), "title": ("lattice", str)}
    cfg = _resolve(args, spec)
    if not cfg["data"]:
        raise SystemExit("plot needs data")
    sample = load_csv(cfg["data"], design_spec="none")
    _heatmap(sample.values, cfg["out"], cfg["title"])
    print(f"wrote {cfg['out']}")
    return 0


# ---------------------------------------------------------------------------


def _add_options(parser, spec):
    parser.add_argument("--config", help="key=value file; flags win on conflict")
    for key, (default, kind) in spec.items():
        flag = "--" + key.replace("_", "-")
        if kind is bool:
            parser.add_argument(flag, action="store_const", const=True, default=None,
                                help=f"default {default}")
        else:
            parser.add_argument(flag, type=kind, default=None, help=f"default {default}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cepsfield",
        description="Cepstral spectral models for 2-D lattice random fields",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("dataset", help="write the bundled straw-yield lattice")
    _add_options(ps, {"out": ("straw.csv", str)})
    ps.set_defaults(func=cmd_dataset)

    ps = sub.add_parser("simulate", help="draw lattices from a coefficient grid")
    _add_options(ps, _SIM_SPEC)
    ps.set_defaults(func=cmd_simulate)

    ps = sub.add_parser("fit", help="fit a model and report diagnostics")
    _add_options(ps, _FIT_SPEC)
    ps.set_defaults(func=cmd_fit)

    ps = sub.add_parser("study", help="replicate sweep: simulate, fit, aggregate")
    _add_options(ps, _STUDY_SPEC)
    ps.set_defaults(func=cmd_study)

    ps = sub.add_parser("extract", help="conditional signal extraction")
    _add_options(ps, _EXTRACT_SPEC)
    ps.set_defaults(func=cmd_extract)

    ps = sub.add_parser("plot", help="heatmap of a lattice CSV")
    _add_options(ps, {"data": (None, str), "out": ("lattice.png", str), "title": ("lattice", str)})
    ps.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
