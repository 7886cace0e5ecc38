"""Command line entry point: ``ctdl train|eval|eval-nll|sample|export``.

Every run directory holds ``config.json`` (the resolved configuration),
``metrics.jsonl`` (one record per epoch), ``model.txt`` (parameters with a
layout header) and task-specific CSV exports.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import classify as cls
from . import cnf as flows
from . import mfg
from .config import ConfigError, RunConfig, parse_config, write_config
from .distributions import GaussianMixture, LabeledDataset, ObstacleCost, make_circles, mixture_logpdf, mixture_sample
from .dynamics import ValueNetSpec
from .odeint import C_OT, C_RUN, Trajectory
from .params import ParamVector

log = logging.getLogger("ctdl")


# ---------------------------------------------------------------------------
# file formats


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else (v if isinstance(v, str) else _fmt(v)) for v in row) + "\n")


def export_trajectories(traj: Trajectory, path, logdet: bool = True, cost: int | None = C_OT) -> None:
    """Write ``traj_id,t,z1..zn,logdet,cost`` rows, one per grid point.

    ``logdet=False`` or ``cost=None`` leave those columns empty.
    """
    n = traj.n
    Z = traj.z
    ld = traj.accumulator(0) if logdet else None
    cc = traj.accumulator(cost) if cost is not None else None
    header = ["traj_id", "t"] + [f"z{i + 1}" for i in range(n)] + ["logdet", "cost"]

    def rows():
        for b in range(Z.shape[1]):
            for j, t in enumerate(traj.times):
                yield ([str(b), t] + list(Z[j, b])
                       + [None if ld is None else ld[j, b], None if cc is None else cc[j, b]])

    write_csv(path, header, rows())


def save_params(params: ParamVector, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# ctdl parameters\n")
        for name, shape in params.layout:
            fh.write(f"# block {name} {'x'.join(map(str, shape))}\n")
        for v in params.data:
            fh.write(_fmt(v) + "\n")


def load_params(path) -> ParamVector:
    layout, values = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("# block "):
            _, _, name, shape = line.split()
            layout.append((name, tuple(int(s) for s in shape.split("x"))))
        elif line and not line.startswith("#"):
            values.append(float(line))
    return ParamVector(layout, np.array(values))


def _check_layout(params: ParamVector, expected: ParamVector) -> ParamVector:
    if params.layout != expected.layout:
        raise ValueError("saved parameter layout does not match the configuration")
    return params


# ---------------------------------------------------------------------------
# task plumbing


def _rng(cfg: RunConfig, stream: int):
    return np.random.default_rng([cfg.seed, stream])


def mixture_from(mc) -> GaussianMixture:
    return GaussianMixture.make(mc.weights, mc.means, mc.stdevs)


def scenario_from(cfg: RunConfig) -> mfg.MfgScenario:
    m = cfg.mfg
    obstacle = ObstacleCost(tuple(m.obstacle.center), m.obstacle.height, m.obstacle.width)
    return mfg.MfgScenario(
        m.variant, m.alpha, m.beta, mixture_from(m.target), obstacle, m.entropy_weight,
        m.terminal_weight if m.variant == "crowd" else 1.0,
    )


def circles_from(cfg: RunConfig, test: bool = False) -> LabeledDataset:
    c = cfg.classify
    count = c.test_count if test else c.count
    seed = [cfg.seed, 2 if test else 1]
    return make_circles(count, c.inner, c.outer, c.noise, seed)


def _opt(cfg: RunConfig) -> dict:
    o = cfg.optimizer
    return dict(lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps, iterations=o.iterations)


class MetricsWriter:
    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(self.path, "w", encoding="utf-8", newline="\n")

    def __call__(self, rec: dict):
        self.fh.write(json.dumps(rec) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def _classify_exports(cfg, model, out: Path) -> dict:
    c = cfg.classify
    N = cfg.steps_eval
    data = circles_from(cfg)
    test = circles_from(cfg, test=True)
    write_csv(out / "dataset.csv", ["x1", "x2", "label"],
              (list(p) + [int(y)] for p, y in zip(data.points, data.labels)))
    logits, traj = cls.classify_forward(model, data.points, N, cfg.scheme)
    feats = traj.z[-1]
    write_csv(out / "features.csv", [f"z{i + 1}" for i in range(model.dim)] + ["label", "logit"],
              (list(z) + [int(y), s] for z, y, s in zip(feats, data.labels, logits)))
    pts, prob = cls.predict_grid(model, c.grid_lim, c.grid_res, N, cfg.scheme)
    write_csv(out / "grid.csv", ["x1", "x2", "prob"], (list(p) + [q] for p, q in zip(pts, prob)))
    export_trajectories(traj, out / "trajectories.csv", logdet=False, cost=None)
    test_acc = cls.eval_accuracy(model, test, N, cfg.scheme)
    return {
        "train_accuracy": cls.eval_accuracy(model, data, N, cfg.scheme),
        "test_accuracy": test_acc,
        "test_errors": int(round((1.0 - test_acc) * len(test))),
        "probe_margin": cls.probe_margin(feats, data.labels),
        "readout": {"W": model.params["W"][0].tolist(), "b": float(model.params["b"][0])},
    }


def _cnf_eval(cfg, model) -> dict:
    target = mixture_from(cfg.cnf.target)
    test = mixture_sample(target, cfg.cnf.test_samples, [cfg.seed, 2])
    N = cfg.steps_eval
    ref = np.random.default_rng([cfg.seed, 4]).standard_normal((1000, model.spec.n))
    _, traj = flows.cnf_sample(model, cfg.cnf.export_count, [cfg.seed, 3], N, cfg.scheme)
    return {
        "nll_test": flows.cnf_nll(model, test, N, cfg.scheme),
        "target_entropy": float(-np.mean(mixture_logpdf(target, test))),
        "inverse_median": float(np.median(flows.inverse_error(model, ref, N, cfg.scheme))),
        "straightness": flows.straightness(traj),
        "straightness_spacetime": flows.straightness(flows.spacetime(traj)),
    }


def _cnf_exports(cfg, model, out: Path, count: int | None = None, seed=None) -> dict:
    N = cfg.steps_eval
    count = count or cfg.cnf.test_samples
    seed = seed if seed is not None else [cfg.seed, 3]
    samples, _ = flows.cnf_sample(model, count, seed, N, cfg.scheme)
    write_csv(out / "samples.csv", [f"x{i + 1}" for i in range(model.spec.n)], samples)
    _, traj = flows.cnf_sample(model, cfg.cnf.export_count, seed, N, cfg.scheme)
    export_trajectories(traj, out / "trajectories.csv", logdet=True, cost=C_OT)
    return {"samples": int(count)}


def _mfg_exports(cfg, vspec, params, scn, out: Path, count: int | None = None, seed=None) -> dict:
    N = cfg.steps_eval
    rng = np.random.default_rng(seed if seed is not None else [cfg.seed, 3])
    x = rng.standard_normal((count or cfg.mfg.eval_batch, scn.n))
    traj, logrho, resid = mfg.simulate_agents(vspec, params, scn, x, N, cfg.scheme)
    export_trajectories(traj, out / "trajectories.csv", logdet=True, cost=C_RUN)
    header = ["traj_id", "t"] + [f"z{i + 1}" for i in range(scn.n)] + ["logrho", "residual"]

    def rows():
        for b in range(x.shape[0]):
            for j, t in enumerate(traj.times):
                yield [str(b), t] + list(traj.z[j, b]) + [logrho[j, b], resid[j, b]]

    write_csv(out / "agents.csv", header, rows())
    return mfg.mfg_metrics(vspec, params, scn, x, N, cfg.scheme)


def _build_model(cfg: RunConfig):
    if cfg.task == "classify":
        return cls.ClassifierModel.create(2, cfg.classify.pad, cfg.hidden, cfg.n_intervals)
    if cfg.task == "cnf":
        n = len(cfg.cnf.target.means[0])
        return flows.CnfModel.create(n, cfg.hidden, cfg.n_intervals, cfg.cnf.alpha)
    return ValueNetSpec(len(cfg.mfg.target.means[0]), cfg.hidden)


def load_run(out):
    out = Path(out)
    cfg = parse_config(out / "config.json")
    shell = _build_model(cfg)
    params = load_params(out / "model.txt")
    if cfg.task == "mfg":
        return cfg, (shell, _check_layout(params, shell.zeros()))
    return cfg, shell.with_params(_check_layout(params, shell.params))


def run(cfg: RunConfig) -> int:
    """Train the configured task and write all artifacts to ``cfg.out``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.json")
    metrics = MetricsWriter(out / "metrics.jsonl")
    try:
        if cfg.task == "classify":
            model, _ = cls.train_classifier(
                circles_from(cfg), pad=cfg.classify.pad, k=cfg.hidden, n_intervals=cfg.n_intervals,
                steps=cfg.steps_train, scheme=cfg.scheme, batch=cfg.classify.batch, seed=cfg.seed,
                callback=metrics, **_opt(cfg))
            save_params(model.params, out / "model.txt")
            summary = _classify_exports(cfg, model, out)
        elif cfg.task == "cnf":
            data = mixture_sample(mixture_from(cfg.cnf.target), cfg.cnf.train_samples, [cfg.seed, 1])
            model, _ = flows.train_cnf(
                data, alpha=cfg.cnf.alpha, k=cfg.hidden, n_intervals=cfg.n_intervals,
                steps=cfg.steps_train, scheme=cfg.scheme, batch=cfg.cnf.batch, seed=cfg.seed,
                callback=metrics, **_opt(cfg))
            save_params(model.params, out / "model.txt")
            summary = _cnf_eval(cfg, model)
            summary.update(_cnf_exports(cfg, model, out))
        else:
            scn = scenario_from(cfg)
            vspec, params, _ = mfg.train_mfg(
                scn, k=cfg.hidden, steps=cfg.steps_train, scheme=cfg.scheme, batch=cfg.mfg.batch,
                seed=cfg.seed, epoch_size=cfg.mfg.epoch_size, eval_batch=cfg.mfg.eval_batch,
                lr_final=cfg.mfg.lr_final, callback=metrics, **_opt(cfg))
            save_params(params, out / "model.txt")
            summary = _mfg_exports(cfg, vspec, params, scn, out)
    except FloatingPointError as exc:
        log.error("training diverged: %s", exc)
        return 3
    finally:
        metrics.close()
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    log.info("wrote %s", out)
    return 0


def evaluate(out, data_csv=None) -> dict:
    cfg, model = load_run(out)
    N = cfg.steps_eval
    if cfg.task == "classify":
        data = circles_from(cfg, test=True)
        if data_csv is not None:
            arr = np.loadtxt(data_csv, delimiter=",", skiprows=1, ndmin=2)
            data = LabeledDataset(arr[:, :-1], arr[:, -1].astype(int))
        return {"accuracy": cls.eval_accuracy(model, data, N, cfg.scheme)}
    if cfg.task == "cnf":
        res = _cnf_eval(cfg, model)
        if data_csv is not None:
            arr = np.loadtxt(data_csv, delimiter=",", skiprows=1, ndmin=2)
            res["nll_data"] = flows.cnf_nll(model, arr, N, cfg.scheme)
        return res
    vspec, params = model
    x = np.random.default_rng([cfg.seed, 3]).standard_normal((cfg.mfg.eval_batch, vspec.n))
    return mfg.mfg_metrics(vspec, params, scenario_from(cfg), x, N, cfg.scheme)


# ---------------------------------------------------------------------------
# argument parsing


def _train_config(args) -> RunConfig:
    overrides = list(args.overrides)
    for flag, key in (("task", "task"), ("seed", "seed"), ("out", "out"), ("variant", "mfg.variant")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return parse_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctdl", description="Continuous-time deep learning experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a run directory")
    t.add_argument("--config", help="YAML or JSON config file")
    t.add_argument("--task", choices=["classify", "cnf", "mfg"])
    t.add_argument("--variant", choices=["ot", "crowd"], help="mfg scenario")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("overrides", nargs="*", metavar="key=value", help="dotted config overrides")

    for name, helptext in (("eval", "evaluate a trained run"), ("eval-nll", "held-out NLL of a trained flow")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--out", required=True, help="run directory")
        e.add_argument("--data", help="CSV with header; last column is the label for classify")

    s = sub.add_parser("sample", help="draw samples / agent paths from a trained run")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dest", help="output directory (defaults to <out>/sample)")

    x = sub.add_parser("export", help="export datasets or trajectories of a trained run")
    x.add_argument("--out", required=True)
    x.add_argument("--what", choices=["dataset", "trajectories"], default="trajectories")
    x.add_argument("--dest", help="output directory (defaults to <out>/export)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        if args.command == "train":
            return run(_train_config(args))
        if args.command in ("eval", "eval-nll"):
            cfg = parse_config(Path(args.out) / "config.json")
            if args.command == "eval-nll" and cfg.task != "cnf":
                raise ConfigError("eval-nll needs a cnf run")
            res = evaluate(args.out, args.data)
            (Path(args.out) / "eval.json").write_text(json.dumps(res, indent=2) + "\n")
            print(json.dumps(res, indent=2))
            return 0
        if args.command == "sample":
            cfg, model = load_run(args.out)
            dest = Path(args.dest or Path(args.out) / "sample")
            if cfg.task == "cnf":
                res = _cnf_exports(cfg, model, dest, args.count, args.seed)
            elif cfg.task == "mfg":
                res = _mfg_exports(cfg, *model, scenario_from(cfg), dest, args.count, args.seed)
            else:
                raise ConfigError("sample needs a cnf or mfg run")
            print(json.dumps(res, indent=2))
            return 0
        if args.command == "export":
            cfg, model = load_run(args.out)
            dest = Path(args.dest or Path(args.out) / "export")
            if args.what == "dataset":
                if cfg.task == "classify":
                    d = circles_from(cfg)
                    write_csv(dest / "dataset.csv", ["x1", "x2", "label"],
                              (list(p) + [int(y)] for p, y in zip(d.points, d.labels)))
                else:
                    mc = cfg.cnf.target if cfg.task == "cnf" else cfg.mfg.target
                    count = cfg.cnf.train_samples if cfg.task == "cnf" else cfg.mfg.eval_batch
                    pts = mixture_sample(mixture_from(mc), count, [cfg.seed, 1])
                    write_csv(dest / "dataset.csv", [f"x{i + 1}" for i in range(pts.shape[1])], pts)
            elif cfg.task == "classify":
                _classify_exports(cfg, model, dest)
            elif cfg.task == "cnf":
                _cnf_exports(cfg, model, dest)
            else:
                _mfg_exports(cfg, *model, scenario_from(cfg), dest)
            print(dest)
            return 0
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
