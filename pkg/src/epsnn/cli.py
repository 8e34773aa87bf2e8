"""Command-line interface: ``epsnn {train,eval,predict,gen-data,verify}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _kernels, verify
from .data import (
    RegressionDataset,
    export_mnist_subset_idx,
    gen_regression,
    load_mnist_idx,
    read_idx,
    regression_test_set,
    sample_spikes,
    stratified_subset,
)
from .dist import NaturalBounds
from .model import NetworkSpec, load_posterior, save_posterior
from .predict import (
    classification_metrics,
    classify,
    forward_predict,
    make_evaluator,
    regression_metrics,
)
from .trainer import TrainConfig, sep_train

log = logging.getLogger("epsnn")

NETWORK_KEYS = {"layer_sizes", "activations", "weight_domains", "priors", "noise_var", "has_bias"}
PRIOR_KEYS = {"kind", "mean", "var", "p"}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
BOUNDS_KEYS = {f.name for f in dataclasses.fields(NaturalBounds)}
DATA_KEYS = {
    "mnist": {"kind", "images", "labels", "test_images", "test_labels", "n_train", "n_test",
              "input_mode", "seed"},
    "regression": {"kind", "variant", "n_train", "n_test", "train_csv", "test_input", "seed"},
}
TOP_KEYS = {"network", "train", "data"}


class ConfigError(ValueError):
    pass


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def load_config(path):
    """Parse and validate a run configuration; unknown keys are rejected."""
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    _check_keys(cfg, TOP_KEYS, "config")
    for k in ("network", "data"):
        if k not in cfg:
            raise ConfigError(f"config: missing section {k!r}")
    net = cfg["network"]
    _check_keys(net, NETWORK_KEYS, "network")
    for i, p in enumerate(net.get("priors") or []):
        _check_keys(p, PRIOR_KEYS, f"network.priors[{i}]")
    train = dict(cfg.get("train") or {})
    _check_keys(train, TRAIN_KEYS, "train")
    if "bounds" in train:
        _check_keys(train["bounds"], BOUNDS_KEYS, "train.bounds")
    data = cfg["data"]
    kind = data.get("kind") if isinstance(data, dict) else None
    if kind not in DATA_KEYS:
        raise ConfigError(f"data.kind: must be one of {sorted(DATA_KEYS)}")
    _check_keys(data, DATA_KEYS[kind], "data")
    base = path.parent
    for k in ("images", "labels", "test_images", "test_labels", "train_csv"):
        if k in data:
            data[k] = str((base / data[k]).resolve())
    try:
        spec = NetworkSpec.from_dict(net)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"network: {e}") from e
    try:
        config = TrainConfig(**train)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"train: {e}") from e
    return spec, config, data


# -- data ----------------------------------------------------------------------


def load_data(data: dict, seed: int):
    """Returns ``(task, train, test, input_mode, test_mode)`` with
    ``train``/``test`` as ``(inputs, targets)`` pairs."""
    seed = data.get("seed", seed)
    if data["kind"] == "mnist":
        for k in ("images", "labels"):
            if k not in data:
                raise ConfigError(f"data.{k} is required")
            if not Path(data[k]).exists():
                raise FileNotFoundError(f"data file not found: {data[k]}")
        X, Y, lab = load_mnist_idx(data["images"], data["labels"])
        rng = np.random.default_rng(seed)
        n_train = int(data.get("n_train", 1000))
        tr = stratified_subset(lab, n_train, rng)
        if "test_images" in data:
            Xt, Yt, lab_t = load_mnist_idx(data["test_images"], data["test_labels"])
            te = np.arange(len(lab_t))
        else:
            Xt, Yt, lab_t = X, Y, lab
            te = np.setdiff1d(np.arange(len(lab)), tr)
        n_test = data.get("n_test")
        if n_test is not None and n_test < len(te):
            te = np.sort(rng.choice(te, int(n_test), replace=False))
        mode = data.get("input_mode", "rate")
        return "classification", (X[tr], Y[tr]), (Xt[te], Yt[te]), mode, mode
    # regression
    if "train_csv" in data:
        if not Path(data["train_csv"]).exists():
            raise FileNotFoundError(f"data file not found: {data['train_csv']}")
        ds = RegressionDataset.read_csv(data["train_csv"], data.get("variant", "custom"))
    else:
        ds = gen_regression(data.get("variant", "D1"), int(data.get("n_train", 600)), seed)
    variant = ds.variant if ds.variant in ("D1", "D2", "D3") else None
    _, rates, y_test = regression_test_set(int(data.get("n_test", 1000)), seed + 1,
                                           variant=variant)
    test_input = data.get("test_input", "rates" if ds.input_kind == "rates" else "bernoulli")
    if test_input == "spikes":
        X_test, test_mode = sample_spikes(rates, np.random.default_rng(seed + 2)), "rate"
    elif test_input == "bernoulli":
        X_test, test_mode = rates, "bernoulli"
    elif test_input == "rates":
        X_test, test_mode = rates, "rate"
    else:
        raise ConfigError("data.test_input must be 'spikes', 'bernoulli' or 'rates'")
    return "regression", (ds.inputs, ds.y), (X_test, y_test), "rate", test_mode


def _metrics(task, post, data, mode):
    if task == "classification":
        return classification_metrics(post, data[0], data[1], mode)
    return regression_metrics(post, data[0], data[1], mode)


def _print_table(task, tr, te, out=None):
    out = out or sys.stdout
    print("metric      train/test", file=out)
    if task == "classification":
        print(f"accuracy    {tr['acc']:.2f}/{te['acc']:.2f}", file=out)
        print(f"PeBCE       {tr['loss']:.3f}/{te['loss']:.3f}", file=out)
    else:
        print(f"MSE         {tr['loss']:.3f}/{te['loss']:.3f}", file=out)


# -- commands ------------------------------------------------------------------


def cmd_train(args):
    spec, config, data = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
        data = {**data, "seed": args.seed}
    task, train, test, mode, test_mode = load_data(data, config.seed)
    ev = make_evaluator(task, train, test, input_mode=mode, test_input_mode=test_mode)
    post, diag = sep_train(train[0], train[1], spec, config, input_mode=mode, evaluate=ev)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_posterior(post, out / "posterior.json")
    diag.write_csv(out / "diagnostics.csv")
    _print_table(task, _metrics(task, post, train, mode), _metrics(task, post, test, test_mode))
    return 0


def cmd_eval(args):
    spec, config, data = load_config(args.config)
    if args.seed is not None:
        data = {**data, "seed": args.seed}
    post = load_posterior(args.posterior)
    task, train, test, mode, test_mode = load_data(data, config.seed if args.seed is None
                                                   else args.seed)
    _print_table(task, _metrics(task, post, train, mode), _metrics(task, post, test, test_mode))
    return 0


def _read_inputs(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:2] == b"\x00\x00" and head[2] == 0x08:
        a = read_idx(path).astype(float)
        return a.reshape(len(a), -1) / 255.0
    with open(path, newline="") as fh:
        first = next(csv.reader(fh), [])
    if first and first[0] == "x" and len(first) > 1 and first[1] == "y":
        return RegressionDataset.read_csv(path).inputs
    skip = 1 if first and not _is_number(first[0]) else 0
    return np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def cmd_predict(args):
    post = load_posterior(args.posterior)
    X = _read_inputs(args.input)
    out = forward_predict(post, X, input_mode=args.input_mode)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        if out.spike_prob is not None:
            k = out.spike_prob.shape[1]
            w.writerow(["id"] + [f"p{i}" for i in range(k)] + ["class"])
            cls = classify(out)
            for n, (row, c) in enumerate(zip(out.spike_prob, cls)):
                w.writerow([n] + [f"{p:.10g}" for p in row] + [int(c)])
        else:
            k = out.pred_mean.shape[1]
            cols = [f"mean{i}" for i in range(k)] + [f"std{i}" for i in range(k)]
            w.writerow(["id"] + cols)
            for n, (m, v) in enumerate(zip(out.pred_mean, out.pred_var)):
                w.writerow([n] + [f"{x:.10g}" for x in m] + [f"{x:.10g}" for x in np.sqrt(v)])
    return 0


def cmd_gen_data(args):
    seed = 0 if args.seed is None else args.seed
    if args.variant == "mnist":
        img, lab = export_mnist_subset_idx(args.out)
        print(f"wrote {img} and {lab}")
        return 0
    ds = gen_regression(args.variant, args.n, seed)
    ds.write_csv(args.out)
    print(f"wrote {args.n} {args.variant} samples to {args.out}")
    return 0


def cmd_verify(args):
    try:
        results = verify.run(args.suites or None)
    except KeyError as e:
        print(str(e), file=sys.stderr)
        return 2
    ok = True
    for suite, checks in results.items():
        for c in checks:
            ok &= c.passed
            tag = "PASS" if c.passed else "FAIL"
            extra = f"  ({c.detail})" if c.detail else ""
            print(f"[{tag}] {suite}: {c.name}{extra}")
    return 0 if ok else 1


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for kernels")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="epsnn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a network from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="report train/test metrics")
    e.add_argument("--config", required=True)
    e.add_argument("--posterior", required=True)
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", parents=[common], help="sampling-free predictions")
    pr.add_argument("--posterior", required=True)
    pr.add_argument("--input", required=True, help="CSV of input rows or an IDX image file")
    pr.add_argument("--input-mode", choices=("rate", "bernoulli"), default="rate")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    g = sub.add_parser("gen-data", parents=[common], help="generate datasets")
    g.add_argument("--variant", choices=("D1", "D2", "D3", "mnist"), required=True)
    g.add_argument("--n", type=int, default=600)
    g.add_argument("--out", required=True, help="CSV path (regression) or directory (mnist)")
    g.set_defaults(func=cmd_gen_data)

    v = sub.add_parser("verify", parents=[common], help="run oracle check suites")
    v.add_argument("suites", nargs="*", help=f"subset of {', '.join(verify.SUITES)}")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    _kernels.set_threads(args.threads)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"epsnn {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
