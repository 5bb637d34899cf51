"""Command-line experiment runner.

Configs are flat ``key = value`` files with dotted keys, one per line;
``#`` starts a comment. Verbs::

    slimtrain run CONFIG [--set key=value ...]
    slimtrain sweep CONFIG [--jobs N]
    slimtrain demo-fig1 [--out DIR]
    slimtrain plot RUN_DIR

Exit codes: 0 success, 2 config error, 3 numerical failure, 1 other failures.
"""
import argparse
import csv
import itertools
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, plots
from .data import make_peaks_dataset, make_teacher_dataset, peaks_grid, peaks, split_holdout
from .optimizers import AdamState, adam_step, linear_grad
from .resnet import ResNetParams, features, init_params
from .sgcv import SgcvConfig
from .stik import FeatureBatch, MemoryBuffer, RegHistory, push_memory, slimtik_step
from .trainer import MODES, OPTIMIZERS, ModelConfig, NumericalFailure, TrainConfig, train

log = logging.getLogger("slimtrain")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

ITER_COLUMNS = ["epoch", "iter", "lambda_k", "lambda_sum", "batch_loss", "grad_norm_theta",
                "wallclock_ms"]
EPOCH_COLUMNS = ["epoch", "train_loss", "val_loss"]
SGCV_COLUMNS = ["iter", "lambda_k", "grid_argmin", "grid_lo", "grid_hi"]
CHECKPOINT_MAGIC = "slimtrain-checkpoint 1"


class ConfigError(ValueError):
    pass


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


REQUIRED = object()

# key -> (parser, default)
SCHEMA = {
    "run.output": (str, REQUIRED),
    "data.task": (_choice("peaks", "teacher"), REQUIRED),
    "data.n": (int, 2000),
    "data.seed": (int, 0),
    "data.val_fraction": (float, 0.1),
    "data.sampling": (_choice("uniform", "grid"), "uniform"),
    "data.domain_lo": (float, -3.0),
    "data.domain_hi": (float, 3.0),
    "data.n_in": (int, 55),
    "data.n_target": (int, 72),
    "data.teacher_width": (int, 16),
    "data.teacher_depth": (int, 8),
    "data.teacher_final_time": (float, 4.0),
    "data.noise_std": (float, 0.0),
    "model.width": (int, 8),
    "model.depth": (int, 8),
    "model.final_time": (float, 5.0),
    "train.batch_size": (int, 5),
    "train.memory_depth": (int, 10),
    "train.learning_rate": (float, 1e-3),
    "train.alpha": (float, 0.0),
    "train.lambda0": (float, 1e-3),
    "train.epochs": (int, 50),
    "train.seed": (int, 0),
    "train.optimizer": (_choice(*OPTIMIZERS), "adam"),
    "train.mode": (_choice(*MODES), "slimtrain"),
    "sgcv.grid_lo": (float, -12.0),
    "sgcv.grid_hi": (float, 2.0),
    "sgcv.grid_points": (int, 25),
    "sgcv.refine_iters": (int, 20),
    "sgcv.signed": (_bool, True),
    "sgcv.sample_count": (_choice("batch", "entries"), "entries"),
    "log.timing": (_bool, False),
    "log.plots": (_bool, True),
}


def read_pairs(path):
    """``[(lineno, key, raw_value)]`` from a key=value file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        pairs.append((lineno, key, value))
    return pairs


def resolve(pairs, source="config"):
    """Type-check raw pairs against the schema and fill in defaults."""
    values = {}
    for lineno, key, raw in pairs:
        where = f"{source}:{lineno}" if lineno else source
        if key not in SCHEMA:
            raise ConfigError(f"{where}: unknown field '{key}'")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"{where}: field '{key}': {exc}") from None
    for key, (_, default) in SCHEMA.items():
        if key not in values:
            if default is REQUIRED:
                raise ConfigError(f"{source}: missing required field '{key}'")
            values[key] = default
    return values


def build_configs(values):
    """``(TrainConfig, ModelConfig)`` from resolved values; validation errors name the field."""
    try:
        sgcv = SgcvConfig(values["sgcv.grid_lo"], values["sgcv.grid_hi"],
                          values["sgcv.grid_points"], values["sgcv.refine_iters"],
                          values["sgcv.signed"], values["sgcv.sample_count"])
    except ValueError as exc:
        raise ConfigError(f"sgcv: {exc}") from None
    try:
        train_cfg = TrainConfig(
            batch_size=values["train.batch_size"], memory_depth=values["train.memory_depth"],
            learning_rate=values["train.learning_rate"], alpha=values["train.alpha"],
            lambda0=values["train.lambda0"], epochs=values["train.epochs"],
            seed=values["train.seed"], optimizer=values["train.optimizer"],
            mode=values["train.mode"], sgcv=sgcv, timing=values["log.timing"])
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None
    if values["model.width"] < 1 or values["model.depth"] < 0:
        raise ConfigError("model: width must be >= 1 and depth >= 0")
    model = ModelConfig(values["model.width"], values["model.depth"], values["model.final_time"])
    return train_cfg, model


def build_data(values):
    """Training and validation sets described by the ``data.*`` fields."""
    try:
        if values["data.task"] == "peaks":
            ds = make_peaks_dataset(values["data.n"],
                                    (values["data.domain_lo"], values["data.domain_hi"]),
                                    values["data.sampling"], values["data.seed"])
        else:
            ds = make_teacher_dataset(values["data.n_in"], values["data.n_target"],
                                      values["data.n"], values["data.teacher_width"],
                                      values["data.noise_std"], values["data.seed"],
                                      values["data.teacher_depth"],
                                      values["data.teacher_final_time"])
    except ValueError as exc:
        raise ConfigError(f"data: {exc}") from None
    frac = values["data.val_fraction"]
    if not 0.0 <= frac < 1.0:
        raise ConfigError("data: field 'data.val_fraction' must be in [0, 1)")
    if frac == 0.0:
        return ds, None
    return split_holdout(ds, frac, values["data.seed"])


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _num(v):
    return "" if v is None else repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_run_logs(out, result):
    write_csv(out / "iterations.csv", ITER_COLUMNS,
              [[r.epoch, r.iteration, _num(r.lambda_k), _num(r.lambda_sum), _num(r.batch_loss),
                _num(r.grad_norm_theta), _num(r.wallclock_ms)] for r in result.records])
    write_csv(out / "epochs.csv", EPOCH_COLUMNS,
              [[e.epoch, _num(e.train_loss), _num(e.val_loss)] for e in result.epochs])
    write_csv(out / "sgcv.csv", SGCV_COLUMNS,
              [[d.iteration, _num(d.lambda_k), _num(d.grid_argmin), _num(d.grid_lo),
                _num(d.grid_hi)] for d in result.sgcv])


def save_checkpoint(path, theta, W, **header):
    """Text header (``key=value`` lines up to ``end``) followed by raw little-endian float64:
    the flat network parameters, then vec(W) column-stacked."""
    W = np.asarray(W, dtype=np.float64)
    flat = theta.flatten()
    fields = dict(n_in=theta.n_in, width=theta.width, depth=theta.depth,
                  step_h=repr(theta.step_h), n_target=W.shape[0], n_theta=flat.size,
                  n_W=W.size, **header)
    text = CHECKPOINT_MAGIC + "\n" + "".join(f"{k}={v}\n" for k, v in fields.items()) + "end\n"
    with open(path, "wb") as fh:
        fh.write(text.encode())
        fh.write(flat.astype("<f8").tobytes())
        fh.write(W.reshape(-1, order="F").astype("<f8").tobytes())


def load_checkpoint(path):
    """``(theta, W, header)`` from :func:`save_checkpoint` output."""
    with open(path, "rb") as fh:
        if fh.readline().decode().strip() != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a slimtrain checkpoint")
        header = {}
        for line in fh:
            line = line.decode().strip()
            if line == "end":
                break
            k, v = line.split("=", 1)
            header[k] = v
        data = np.frombuffer(fh.read(), dtype="<f8")
    n_theta, n_W = int(header["n_theta"]), int(header["n_W"])
    if data.size != n_theta + n_W:
        raise ValueError(f"{path}: expected {n_theta + n_W} values, found {data.size}")
    theta = ResNetParams.from_flat(data[:n_theta], int(header["width"]), int(header["depth"]),
                                   int(header["n_in"]), float(header["step_h"]))
    W = data[n_theta:].reshape((int(header["n_target"]), -1), order="F").copy()
    return theta, W, header


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def write_plots(out):
    """Regenerate ``loss.svg`` and ``lambda_heatmap.svg`` from a run directory's CSVs."""
    out = Path(out)
    ep = np.genfromtxt(out / "epochs.csv", delimiter=",", names=True, ndmin=1)
    it = np.genfromtxt(out / "iterations.csv", delimiter=",", names=True, ndmin=1,
                       missing_values="", filling_values=np.nan)
    (out / "loss.svg").write_text(plots.line_plot(
        {"train": (ep["epoch"], ep["train_loss"]), "validation": (ep["epoch"], ep["val_loss"])},
        title="loss", xlabel="epoch", ylabel="mean data fit"))
    grid = plots.fold_by_epoch(it["epoch"], it["lambda_k"])
    (out / "lambda_heatmap.svg").write_text(plots.heatmap(
        grid, title="selected regularization increment (grey: non-positive)"))


def execute(values):
    """Run one training job described by resolved ``values``; returns an exit code."""
    train_cfg, model = build_configs(values)
    train_set, val_set = build_data(values)
    out = Path(values["run.output"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": {k: format_value(values[k]) for k in SCHEMA},
        "version": __version__,
        "seed": {"data": values["data.seed"], "train": values["train.seed"]},
        "started": _now(),
        "status": "running",
        "outputs": {name: str(out / name) for name in
                    ("iterations.csv", "epochs.csv", "sgcv.csv", "checkpoint_best",
                     "checkpoint_final")},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    code = EXIT_OK
    try:
        result = train(train_cfg, train_set, val_set, model)
    except NumericalFailure as exc:
        log.error("numerical failure: %s", exc)
        result = exc.partial
        manifest["status"] = "numerical_failure"
        manifest["error"] = str(exc)
        code = EXIT_NUMERIC
    write_run_logs(out, result)
    if code == EXIT_OK:
        save_checkpoint(out / "checkpoint_final", result.theta, result.W, mode=train_cfg.mode,
                        epoch=len(result.epochs))
        save_checkpoint(out / "checkpoint_best", result.best_theta, result.best_W,
                        mode=train_cfg.mode, epoch=result.best_epoch)
        th = result.theta.flatten()
        last = result.epochs[-1] if result.epochs else None
        manifest["status"] = "ok"
        manifest["final"] = {
            "train_loss": last.train_loss if last else None,
            "val_loss": last.val_loss if last and math.isfinite(last.val_loss) else None,
            "best_epoch": result.best_epoch,
            # regularization terms, logged apart from the data fit
            "theta_sq_norm": float(th @ th),
            "W_sq_norm": float(np.sum(result.W ** 2)),
            "lambda_sum": result.history.running_sum,
        }
        if values["log.plots"]:
            write_plots(out)
    manifest["finished"] = _now()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return code


def manifest_pairs(path):
    """Raw ``(lineno, key, value)`` pairs from a manifest's config echo."""
    try:
        echo = json.loads(Path(path).read_text())["config"]
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read manifest ({exc.strerror})") from None
    except (ValueError, KeyError, TypeError):
        raise ConfigError(f"{path}: not a run manifest") from None
    return [(0, k, v) for k, v in echo.items()]


def config_from_manifest(path):
    """Resolved values echoed in a run's ``manifest.json``."""
    return resolve(manifest_pairs(path), str(path))


# sweeps

def parse_sweep(pairs, source):
    """Split sweep pairs into base pairs, grid axes and explicit extra cells."""
    base, axes, extra = [], {}, {}
    for lineno, key, raw in pairs:
        if key.startswith("grid."):
            name = key[5:]
            vals = [v.strip() for v in raw.split(",") if v.strip()]
            if name not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown grid field '{name}'")
            if not vals:
                raise ConfigError(f"{source}:{lineno}: grid field '{name}' is empty")
            axes[name] = (lineno, vals)
        elif key.startswith("include."):
            parts = key.split(".", 2)
            if len(parts) != 3 or parts[2] not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: bad include key '{key}'")
            extra.setdefault(parts[1], []).append((lineno, parts[2], raw))
        else:
            base.append((lineno, key, raw))
    if not axes and not extra:
        raise ConfigError(f"{source}: sweep needs at least one 'grid.<field>' entry")
    return base, axes, extra


def sweep_cells(base, axes, extra):
    """List of ``(overrides, pairs)`` per cell: the Cartesian product, then the extras."""
    names = list(axes)
    cells = []
    for combo in itertools.product(*(axes[n][1] for n in names)):
        over = dict(zip(names, combo))
        cells.append((over, base + [(axes[n][0], n, v) for n, v in over.items()]))
    for tag in sorted(extra, key=lambda t: (len(t), t)):
        over = {k: v for _, k, v in extra[tag]}
        cells.append((over, base + extra[tag]))
    return cells


def _run_cell(args):
    values, = args
    try:
        return execute(values)
    except Exception as exc:  # a failed cell must not stop the sweep
        log.error("cell %s failed: %s", values["run.output"], exc)
        return EXIT_FAIL


def _final_losses(run_dir):
    path = Path(run_dir) / "epochs.csv"
    if not path.exists():
        return math.nan, math.nan, math.nan, 0
    ep = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
    if ep.size == 0:
        return math.nan, math.nan, math.nan, 0
    val = ep["val_loss"]
    score = val if np.isfinite(val).any() else ep["train_loss"]
    best = int(np.nanargmin(score))
    return float(ep["train_loss"][-1]), float(val[-1]), float(score[best]), int(ep["epoch"][best])


def sweep(path, jobs=1):
    pairs = read_pairs(path)
    base, axes, extra = parse_sweep(pairs, str(path))
    base_values = resolve(base, str(path))
    root = Path(base_values["run.output"])
    cells = sweep_cells(base, axes, extra)
    keys = list(dict.fromkeys(k for over, _ in cells for k in over))
    resolved = []
    for i, (over, cell_pairs) in enumerate(cells):
        values = resolve(cell_pairs, str(path))
        values["run.output"] = str(root / f"cell_{i:03d}")
        resolved.append(values)
    root.mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(_run_cell, [(v,) for v in resolved]))
    else:
        codes = [_run_cell((v,)) for v in resolved]
    rows = []
    for i, ((over, _), values, code) in enumerate(zip(cells, resolved, codes)):
        final, val, best, best_epoch = _final_losses(values["run.output"])
        status = {EXIT_OK: "ok", EXIT_NUMERIC: "numerical_failure"}.get(code, "failed")
        rows.append([i, values["run.output"]] + [format_value(values[k]) for k in keys]
                    + [status, _num(final), _num(val), _num(best), best_epoch])
    write_csv(root / "summary.csv",
              ["cell", "run_dir"] + keys + ["status", "final_train_loss", "final_val_loss",
                                            "best_loss", "best_epoch"], rows)
    if all(c == EXIT_OK for c in codes):
        return EXIT_OK
    return EXIT_NUMERIC if EXIT_NUMERIC in codes else EXIT_FAIL


# linear demonstration: sTik versus ADAM on frozen features

def demo_fig1(out, n_side=20, batch_size=5, lam=1e-3, width=8, lr=1e-3, seed=0):
    """One epoch of full-memory sTik (constant increments lam / n_batches) and ADAM on the
    same frozen-feature peaks regression; writes ``relative_error.csv``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    Y = peaks_grid(n_side)
    C = peaks(Y[0], Y[1])[None, :]
    theta = init_params(width, 1, 2, 1.0, seed)
    Z = features(theta, Y)
    N = Z.shape[1]
    n_batches = N // batch_size
    w_hat = np.linalg.solve(Z @ Z.T + lam * np.eye(Z.shape[0]), Z @ C.T).T
    scale = np.linalg.norm(w_hat)
    order = np.random.default_rng(seed).permutation(N)
    W_stik = np.zeros_like(w_hat)
    W_adam = np.zeros_like(w_hat)
    state = AdamState.fresh(W_adam.size)
    memory = MemoryBuffer(n_batches)
    hist = RegHistory()
    rows = [[0, _num(1.0), _num(1.0)]]
    for k in range(n_batches):
        idx = order[k * batch_size:(k + 1) * batch_size]
        batch = FeatureBatch(Z[:, idx], C[:, idx], k)
        W_stik = slimtik_step(W_stik, memory, batch, hist, lam / n_batches).W
        hist.accept(lam / n_batches)
        memory = push_memory(memory, batch)
        g = linear_grad(W_adam, Z[:, idx], C[:, idx], lam / N)
        flat, state = adam_step(state, W_adam.ravel(), g.ravel(), lr)
        W_adam = flat.reshape(W_adam.shape)
        rows.append([k + 1, _num(np.linalg.norm(W_stik - w_hat) / scale),
                     _num(np.linalg.norm(W_adam - w_hat) / scale)])
    write_csv(out / "relative_error.csv", ["iter", "stik_rel_err", "adam_rel_err"], rows)
    it = np.array([r[0] for r in rows], dtype=float)
    (out / "relative_error.svg").write_text(plots.line_plot(
        {"sTik": (it, [float(r[1]) for r in rows]), "ADAM": (it, [float(r[2]) for r in rows])},
        title="relative error to the Tikhonov solution", xlabel="iteration",
        ylabel="relative error"))
    return float(rows[-1][1]), float(rows[-1][2])


def main(argv=None):
    parser = argparse.ArgumentParser(prog="slimtrain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("run", help="train one configuration")
    p.add_argument("config", help="key=value file, or a previous run's manifest.json")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field")
    p = sub.add_parser("sweep", help="run the Cartesian product of grid.* fields")
    p.add_argument("config")
    p.add_argument("--jobs", type=int, default=1, help="cells run in parallel")
    p = sub.add_parser("demo-fig1", help="sTik vs ADAM on a frozen-feature linear problem")
    p.add_argument("--out", default="fig1")
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("plot", help="regenerate SVG plots of a run directory")
    p.add_argument("run_dir")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "run":
            is_manifest = args.config.endswith(".json")
            pairs = manifest_pairs(args.config) if is_manifest else read_pairs(args.config)
            for item in args.set:
                if "=" not in item:
                    raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
                k, v = item.split("=", 1)
                pairs = [p for p in pairs if p[1] != k.strip()] + [(0, k.strip(), v.strip())]
            return execute(resolve(pairs, args.config))
        if args.verb == "sweep":
            return sweep(args.config, args.jobs)
        if args.verb == "demo-fig1":
            stik, adam = demo_fig1(args.out, seed=args.seed)
            print(f"final relative error: sTik {stik:.3e}, ADAM {adam:.3e}")
            return EXIT_OK
        write_plots(args.run_dir)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
