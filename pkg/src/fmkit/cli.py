"""Command-line entry point: ``fmkit <command> [--config run.json] [--dot.path=value ...]``."""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data as datasets
from . import discrete, metrics, sphere
from .errors import ArgumentError, ConfigurationError, FMKitError, UnsupportedError
from .loss import GuidedModel
from .model import MLP, GaussianOracleVelocity, load_checkpoint, save_checkpoint
from .path import Parameterization, sample_path, standard_normal_logpdf
from .scheduler import MixtureScheduler, make_scheduler
from .solver import ConvertedModel, ScheduleTransformedModel, SolveConfig, compute_likelihood, ode_sample, sde_sample
from .train import TrainConfig, sphere_batch, sphere_eval_loss, train_dfm, train_flow, train_sphere

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_INCOMPATIBLE = 0, 2, 3, 4, 5
BUILTIN_ORACLE = "builtin:gaussian_oracle"
CONTINUOUS_KINDS = ("mlp", GaussianOracleVelocity.kind)

DEFAULTS = {
    "seed": None,
    "output_dir": "run",
    "dataset": {
        "kind": "moons", "n": 10000, "noise": 0.1, "path": None, "mu": [2.0, 0.0], "s2": 1.0,
        "K": 8, "d": 4, "n_support": 32, "centers": [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], "concentration": 20.0,
    },
    "scheduler": "cond_ot",
    "mixture": {"kind": "polynomial_convex", "n": 1.0},
    "parameterization": "velocity",
    "model": {"hidden": [64, 64, 64], "activation": "elu", "n_classes": 0, "embed_dim": 0},
    "train": TrainConfig().to_dict(),
    "solve": {
        "method": "midpoint", "h": 0.01, "t_start": 0.0, "t_end": 1.0, "eps": 1e-3, "beta": 0.0,
        "divergence": "exact", "n_probes": 1, "probe": "rademacher",
    },
    "sample": {
        "n": 10000, "chunk": 1000, "label": None, "guidance": 1.0, "histogram": False,
        "bins": 64, "bounds": [[-4.0, 4.0], [-4.0, 4.0]], "corrector": 0.0,
    },
    "discrete": {"source": "uniform"},
    "oracle": {"mu": [2.0, 0.0], "s2": 1.0},
    "transform": {"scheduler": "cond_ot"},
    "eval": {"n_mc": 16},
}

# Per-command defaults layered over DEFAULTS before the user config.
COMMAND_DEFAULTS = {
    "dfm-train": {"dataset": {"kind": "discrete_toy", "n": 100000},
                  "model": {"hidden": [128, 128]}, "train": {"steps": 5000}},
    "dfm-sample": {"solve": {"h": 0.01}},
    "sphere-train": {"dataset": {"kind": "sphere_mixture", "n": 10000}, "train": {"steps": 3000, "coupling": "ot"}},
    "sphere-sample": {"solve": {"h": 0.01}},
}

COMMANDS = {}


def command(name, help_text):
    def wrap(fn):
        COMMANDS[name] = (fn, help_text)
        return fn

    return wrap


# configuration ------------------------------------------------------------------


def deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(items) -> list[tuple[list[str], object]]:
    """``--a.b=value`` (or ``--a.b value``) pairs; values are JSON when they parse."""
    out = []
    items = list(items)
    i = 0
    while i < len(items):
        item = items[i]
        if not item.startswith("--") or len(item) < 3:
            raise ConfigurationError(f"unexpected argument {item!r}")
        key = item[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        elif i + 1 < len(items) and not items[i + 1].startswith("--"):
            value = items[i + 1]
            i += 1
        else:
            raise ConfigurationError(f"override {item!r} needs a value")
        out.append((key.split("."), _parse_value(value)))
        i += 1
    return out


def apply_override(cfg: dict, path: list[str], value):
    if path[0] not in DEFAULTS:
        raise ConfigurationError(f"unknown config key {'.'.join(path)!r}")
    node = cfg
    for p in path[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[path[-1]] = value


def load_config(name: str, config_path, overrides) -> dict:
    cfg = deep_merge(DEFAULTS, COMMAND_DEFAULTS.get(name, {}))
    if config_path:
        try:
            user = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigurationError(f"{config_path}: malformed JSON ({err})") from None
        if not isinstance(user, dict):
            raise ConfigurationError(f"{config_path}: config must be a JSON object")
        unknown = set(user) - set(DEFAULTS) - {"task"}
        if unknown:
            raise ConfigurationError(f"{config_path}: unknown config keys {sorted(unknown)}")
        cfg = deep_merge(cfg, user)
    for path, value in overrides:
        apply_override(cfg, path, value)
    if cfg.get("seed") is None:
        raise ConfigurationError("a seed is required (set \"seed\" in the config or pass --seed=N)")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigurationError("seed must be a nonnegative integer")
    return cfg


def solve_config(cfg: dict, **change) -> SolveConfig:
    s = dict(cfg["solve"])
    s.update(change)
    beta = s["beta"]
    return SolveConfig(
        method=s["method"], step_size=float(s["h"]), t_start=float(s["t_start"]), t_end=float(s["t_end"]),
        eps=float(s["eps"]), divergence=s["divergence"], n_probes=int(s["n_probes"]), probe=s["probe"],
        beta=tuple(beta) if isinstance(beta, list) else float(beta),
    )


def mixture_of(cfg: dict) -> MixtureScheduler:
    return MixtureScheduler.from_dict(cfg["mixture"])


def out_dir(cfg: dict) -> Path:
    p = Path(cfg["output_dir"])
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_metrics(path, log):
    Path(path).write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in log))


# datasets -----------------------------------------------------------------------


def continuous_dataset(cfg: dict):
    """``(points, labels or None)`` from the dataset section."""
    ds = cfg["dataset"]
    if ds.get("path"):
        return datasets.read_points(ds["path"]), None
    kind, n, seed = ds["kind"], ds["n"], cfg["seed"]
    if kind == "moons":
        pts = datasets.moons(n, ds["noise"], seed)
        return pts, (np.arange(n) >= (n + 1) // 2).astype(int)
    if kind == "checkerboard":
        return datasets.checkerboard(n, seed), None
    if kind == "gaussian":
        return datasets.gaussian(n, ds["mu"], ds["s2"], seed), None
    raise ConfigurationError(f"unknown continuous dataset {kind!r}")


def write_dataset(cfg: dict, output: Path) -> dict:
    ds = cfg["dataset"]
    kind = ds["kind"]
    if kind == "discrete_toy":
        tokens, target = datasets.discrete_toy(ds["K"], ds["d"], ds["n"], cfg["seed"], ds["n_support"])
        datasets.write_tokens(output, tokens)
        pmf_path = pmf_path_for(output)
        target.save(pmf_path)
        return {"data": str(output), "target_pmf": str(pmf_path), "n": int(tokens.shape[0])}
    if kind == "sphere_mixture":
        pts = datasets.sphere_mixture(ds["n"], ds["centers"], ds["concentration"], cfg["seed"])
        datasets.write_sphere_points(output, pts)
        return {"data": str(output), "n": int(pts.shape[0])}
    pts, _ = continuous_dataset(cfg)
    datasets.write_points(output, pts)
    return {"data": str(output), "n": int(pts.shape[0])}


def pmf_path_for(data_path) -> Path:
    p = Path(data_path)
    return p.with_name(p.stem + ".pmf.json")


# parallel sampling ----------------------------------------------------------------


def chunked(cfg: dict, n: int, work, threads: int | None):
    """Run ``work(rng, size)`` over fixed-size chunks, each with its own seed substream.

    Results do not depend on the thread count.
    """
    chunk = int(cfg["sample"]["chunk"])
    sizes = [min(chunk, n - i) for i in range(0, n, chunk)]
    seqs = np.random.SeedSequence(cfg["seed"]).spawn(len(sizes))
    jobs = [(np.random.default_rng(s), k) for s, k in zip(seqs, sizes)]
    threads = max(1, threads or os.cpu_count() or 1)
    if threads == 1 or len(jobs) == 1:
        return [work(r, k) for r, k in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: work(*job), jobs))


# checkpoints ------------------------------------------------------------------------


def open_checkpoint(cfg: dict, path, allowed_kinds):
    if not path:
        raise ConfigurationError("--checkpoint is required")
    if path == BUILTIN_ORACLE:
        sched = make_scheduler(cfg["scheduler"])
        model = GaussianOracleVelocity(cfg["oracle"]["mu"], cfg["oracle"]["s2"], sched)
        header = {"model": model.kind, "scheduler": sched.to_dict(), "parameterization": "velocity",
                  "data_dim": model.data_dim, "meta": {"task": "continuous"}}
        return model, header
    model, header = load_checkpoint(path)
    if header.get("model") not in allowed_kinds:
        raise UnsupportedError(f"checkpoint model kind {header.get('model')!r} is not usable here ({allowed_kinds})")
    return model, header


def velocity_view(model, header, sc: SolveConfig):
    """Velocity-parameterized model and a solve window avoiding conversion singularities."""
    sched = make_scheduler(header["scheduler"])
    param = Parameterization.parse(header.get("parameterization", "velocity"))
    t0, t1 = sc.t_start, sc.t_end
    if param in (Parameterization.X1_PREDICTION, Parameterization.SCORE):
        t1 = min(t1, 1.0 - sc.eps)
    if param in (Parameterization.X0_PREDICTION, Parameterization.SCORE):
        t0 = max(t0, sc.eps)
    if param is not Parameterization.VELOCITY:
        model = ConvertedModel(model, sched, param)
    return model, sched, t0, t1


def _continuous_sample(cfg, model, header, threads, transform=None):
    sc = solve_config(cfg)
    model, sched, t0, t1 = velocity_view(model, header, sc)
    if transform is not None:
        wrapped = ScheduleTransformedModel(model, sched, transform)
        if not wrapped.is_identity:
            t1 = min(t1, 1.0 - sc.eps)
            model, sched = wrapped, transform
    s = cfg["sample"]
    if s["label"] is not None:
        model = GuidedModel(model, int(s["label"]), float(s["guidance"]))
    sc = solve_config(cfg, t_start=t0, t_end=t1, h=min(sc.step_size, t1 - t0))
    dim = int(header.get("data_dim", len(cfg["oracle"]["mu"])))
    stochastic = sc.beta != 0 and sc.beta != (0, 0)

    def work(rng, k):
        x = rng.standard_normal((k, dim))
        if stochastic:
            return sde_sample(model, x, sc, rng, scheduler=sched, keep_path=False)[-1][1]
        return ode_sample(model, x, sc, keep_path=False)[-1][1]

    return np.concatenate(chunked(cfg, int(s["n"]), work, threads))


# commands ---------------------------------------------------------------------------


@command("dataset", "generate a dataset file (moons, checkerboard, gaussian, discrete_toy, sphere_mixture)")
def cmd_dataset(cfg, args):
    output = Path(args.output or out_dir(cfg) / "data.csv")
    output.parent.mkdir(parents=True, exist_ok=True)
    if args.path_samples:
        pts, _ = continuous_dataset(cfg)
        rng = np.random.default_rng([cfg["seed"], 7])
        ps = sample_path(make_scheduler(cfg["scheduler"]), rng.random(pts.shape[0]), rng.standard_normal(pts.shape), pts)
        output.write_text(ps.csv_header() + "\n" + datasets.format_points(ps.rows()).split("\n", 1)[1])
        return {"path_samples": str(output), "n": int(pts.shape[0])}
    return write_dataset(cfg, output)


@command("train", "train a continuous flow-matching MLP; writes model.ckpt and metrics.jsonl")
def cmd_train(cfg, args):
    pts, labels = continuous_dataset(cfg)
    m = cfg["model"]
    if not m["n_classes"]:
        labels = None
    elif labels is None:
        raise ConfigurationError("class-conditional training needs a labelled dataset (moons)")
    model = MLP(pts.shape[1], hidden=m["hidden"], n_classes=m["n_classes"], embed_dim=m["embed_dim"],
                activation=m["activation"], seed=cfg["seed"])
    sched = make_scheduler(cfg["scheduler"])
    tc = TrainConfig.from_dict(cfg["train"])
    streams = np.random.SeedSequence(cfg["seed"]).spawn(2)
    log = train_flow(model, pts, sched, tc, np.random.default_rng(streams[0]), cfg["parameterization"],
                     labels, np.random.default_rng(streams[1]))
    model.quantize()
    d = out_dir(cfg)
    save_checkpoint(d / "model.ckpt", model, sched, Parameterization.parse(cfg["parameterization"]).value,
                    task="continuous", train=tc.to_dict(), seed=cfg["seed"])
    write_metrics(d / "metrics.jsonl", log)
    return {"checkpoint": str(d / "model.ckpt"), "final_loss": log[-1]["loss"] if log else None}


def _render(cfg, pts, path):
    s = cfg["sample"]
    img = metrics.render_histogram(pts, int(s["bins"]), tuple(tuple(b) for b in s["bounds"]))
    metrics.write_pgm(path, img)


@command("sample", "sample a continuous checkpoint (or builtin:gaussian_oracle); writes samples.csv")
def cmd_sample(cfg, args):
    model, header = open_checkpoint(cfg, args.checkpoint, CONTINUOUS_KINDS)
    pts = _continuous_sample(cfg, model, header, args.threads)
    output = Path(args.output or out_dir(cfg) / "samples.csv")
    output.parent.mkdir(parents=True, exist_ok=True)
    datasets.write_points(output, pts)
    result = {"samples": str(output), "n": int(pts.shape[0])}
    if cfg["sample"]["histogram"]:
        if pts.shape[1] != 2:
            raise ArgumentError("histograms need 2-D samples")
        img = output.with_suffix(".pgm")
        _render(cfg, pts, img)
        result["histogram"] = str(img)
    return result


@command("likelihood", "log-likelihood of --input points under a continuous checkpoint; writes JSON")
def cmd_likelihood(cfg, args):
    model, header = open_checkpoint(cfg, args.checkpoint, CONTINUOUS_KINDS)
    if not args.input:
        raise ConfigurationError("--input points CSV is required")
    pts = datasets.read_points(args.input)
    sc = solve_config(cfg)
    model, _, _, _ = velocity_view(model, header, sc)
    sc = sc.clipped()

    chunk = int(cfg["sample"]["chunk"])
    starts = list(range(0, pts.shape[0], chunk))
    seqs = np.random.SeedSequence([cfg["seed"], 11]).spawn(len(starts))

    def run(job):
        i, seq = job
        return compute_likelihood(model, pts[i : i + chunk], standard_normal_logpdf, sc, np.random.default_rng(seq))

    threads = max(1, args.threads or os.cpu_count() or 1)
    jobs = list(zip(starts, seqs))
    if threads == 1:
        parts = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, jobs))
    x0 = np.concatenate([p[0] for p in parts])
    logp = np.concatenate([p[1] for p in parts])
    report = {
        "results": [{"x": x.tolist(), "x0": z.tolist(), "log_p1": float(v)} for x, z, v in zip(pts, x0, logp)],
        "config": sc.to_dict(),
        "note": f"time window clipped to [{sc.t_start}, {sc.t_end}]; the clipped ends are not integrated",
    }
    output = Path(args.output or out_dir(cfg) / "likelihood.json")
    output.parent.mkdir(parents=True, exist_ok=True)
    write_json(output, report)
    return {"likelihood": str(output), "mean_log_p1": float(np.mean(logp))}


@command("transform-scheduler", "re-sample a checkpoint under transform.scheduler via the scale-time map")
def cmd_transform(cfg, args):
    model, header = open_checkpoint(cfg, args.checkpoint, CONTINUOUS_KINDS)
    target = make_scheduler(cfg["transform"]["scheduler"])
    pts = _continuous_sample(cfg, model, header, args.threads, transform=target)
    output = Path(args.output or out_dir(cfg) / "samples.csv")
    output.parent.mkdir(parents=True, exist_ok=True)
    datasets.write_points(output, pts)
    return {"samples": str(output), "n": int(pts.shape[0]), "scheduler": target.to_dict()}


def _token_data(cfg):
    ds = cfg["dataset"]
    d = out_dir(cfg)
    if ds.get("path"):
        tokens = datasets.read_tokens(ds["path"], ds["K"])
        return tokens, ds["K"], None
    if ds["kind"] != "discrete_toy":
        raise ConfigurationError(f"dfm-train needs a token dataset, got {ds['kind']!r}")
    info = write_dataset(cfg, d / "train_tokens.txt")
    return datasets.read_tokens(info["data"]), ds["K"], info["target_pmf"]


@command("dfm-train", "train a discrete flow-matching posterior denoiser on token sequences")
def cmd_dfm_train(cfg, args):
    tokens, K, pmf = _token_data(cfg)
    source = cfg["discrete"]["source"]
    vocab = K + 1 if source == "mask" else K
    discrete.make_source_sampler(source, vocab)
    kappa = mixture_of(cfg)
    den = discrete.DiscreteDenoiser(vocab, tokens.shape[1], cfg["model"]["hidden"], seed=cfg["seed"],
                                    mask_token=K if source == "mask" else None)
    tc = TrainConfig.from_dict(cfg["train"])
    log = train_dfm(den, tokens, kappa, tc, np.random.default_rng(cfg["seed"]), source)
    den.quantize()
    d = out_dir(cfg)
    save_checkpoint(d / "model.ckpt", den, parameterization="posterior", task="discrete", source=source,
                    data_vocab=K, mixture=kappa.to_dict(), target_pmf=pmf, train=tc.to_dict(), seed=cfg["seed"])
    write_metrics(d / "metrics.jsonl", log)
    return {"checkpoint": str(d / "model.ckpt"), "final_loss": log[-1]["loss"] if log else None, "target_pmf": pmf}


def _corrector_schedule(c):
    if isinstance(c, list):
        c0, c1 = (float(v) for v in c)
        return lambda t: c0 + (c1 - c0) * t
    return float(c)


@command("dfm-sample", "sample token sequences from a discrete checkpoint; writes samples.txt")
def cmd_dfm_sample(cfg, args):
    den, header = open_checkpoint(cfg, args.checkpoint, (discrete.DiscreteDenoiser.kind,))
    meta = header.get("meta", {})
    source = meta.get("source", "uniform")
    kappa = MixtureScheduler.from_dict(meta.get("mixture", cfg["mixture"]))
    draw = discrete.make_source_sampler(source, den.K)
    pmf = discrete.source_pmf(source, den.K)
    h = float(cfg["solve"]["h"])
    corr = _corrector_schedule(cfg["sample"]["corrector"])
    if source == "mask" and corr:
        raise UnsupportedError("the corrector needs an i.i.d. uniform source")

    def work(rng, k):
        return discrete.dfm_sample(den, draw(rng, (k, den.d)), kappa, h, rng, corrector=corr, source=pmf)

    tokens = np.concatenate(chunked(cfg, int(cfg["sample"]["n"]), work, args.threads))
    output = Path(args.output or out_dir(cfg) / "samples.txt")
    output.parent.mkdir(parents=True, exist_ok=True)
    datasets.write_tokens(output, tokens)
    return {"samples": str(output), "n": int(tokens.shape[0])}


def _sphere_model_config(cfg):
    m = cfg["model"]
    return MLP(3, hidden=m["hidden"], activation=m["activation"], seed=cfg["seed"])


@command("sphere-train", "train a geodesic flow on S^2 from the uniform distribution")
def cmd_sphere_train(cfg, args):
    ds = cfg["dataset"]
    if ds.get("path"):
        pts = datasets.read_sphere_points(ds["path"])
    elif ds["kind"] == "sphere_mixture":
        pts = datasets.sphere_mixture(ds["n"], ds["centers"], ds["concentration"], cfg["seed"])
    else:
        raise ConfigurationError(f"sphere-train needs sphere data, got {ds['kind']!r}")
    model = _sphere_model_config(cfg)
    kappa = mixture_of(cfg)
    tc = TrainConfig.from_dict(cfg["train"])
    # fixed held-out batches, paired the same way as training, score init vs trained
    ev_rng = np.random.default_rng([cfg["seed"], 7])
    evals = [sphere_batch(ev_rng, pts, kappa, tc.batch, None, tc.coupling) for _ in range(20)]
    ev_init = float(np.mean([sphere_eval_loss(model, b) for b in evals]))
    log = train_sphere(model, pts, kappa, tc, np.random.default_rng(cfg["seed"]))
    model.quantize()
    ev_final = float(np.mean([sphere_eval_loss(model, b) for b in evals]))
    d = out_dir(cfg)
    save_checkpoint(d / "model.ckpt", model, parameterization="velocity", task="sphere", mixture=kappa.to_dict(),
                    train=tc.to_dict(), seed=cfg["seed"])
    write_metrics(d / "metrics.jsonl", log)
    return {"checkpoint": str(d / "model.ckpt"), "initial_loss": log[0]["loss"] if log else None,
            "final_loss": log[-1]["loss"] if log else None, "eval_loss_init": ev_init, "eval_loss_final": ev_final}


@command("sphere-sample", "sample a sphere checkpoint by exponential-map stepping; writes samples.csv")
def cmd_sphere_sample(cfg, args):
    model, header = open_checkpoint(cfg, args.checkpoint, ("mlp",))
    if header.get("meta", {}).get("task") != "sphere" or header.get("data_dim") != 3:
        raise UnsupportedError("checkpoint was not trained with sphere-train")
    h = float(cfg["solve"]["h"])

    def work(rng, k):
        return sphere.sphere_sample(model, sphere.uniform_sphere(rng, k), h, keep_path=False)[-1][1]

    pts = np.concatenate(chunked(cfg, int(cfg["sample"]["n"]), work, args.threads))
    output = Path(args.output or out_dir(cfg) / "samples.csv")
    output.parent.mkdir(parents=True, exist_ok=True)
    datasets.write_sphere_points(output, pts)
    return {"samples": str(output), "n": int(pts.shape[0])}


@command("eval", "compare --input samples with --reference data (energy distance, or TV/ELBO for tokens)")
def cmd_eval(cfg, args):
    if not args.input or not (args.reference or args.target):
        raise ConfigurationError("eval needs --input and --reference (or --target for token pmfs)")
    gen_path = Path(args.input)
    if gen_path.suffix == ".txt":
        gen = datasets.read_tokens(gen_path)
        report = {"kind": "discrete", "n": int(gen.shape[0])}
        target = datasets.TargetPMF.load(args.target or pmf_path_for(args.reference))
        report["tv_joint"] = metrics.joint_tv(gen, target)
        report["tv_marginal_max"] = metrics.marginal_tv(gen, target.coordinate_marginals())
        if args.checkpoint:
            den, header = open_checkpoint(cfg, args.checkpoint, (discrete.DiscreteDenoiser.kind,))
            meta = header.get("meta", {})
            ref = datasets.read_tokens(args.reference) if args.reference else target.support
            kappa = MixtureScheduler.from_dict(meta.get("mixture", cfg["mixture"]))
            draw = discrete.make_source_sampler(meta.get("source", "uniform"), den.K)
            bound = discrete.elbo(den, ref, kappa, draw, np.random.default_rng(cfg["seed"]), int(cfg["eval"]["n_mc"]))
            report["elbo_nll_bound_mean"] = float(np.mean(bound))
    else:
        gen = datasets.read_points(gen_path)
        ref = datasets.read_points(args.reference, gen.shape[1])
        report = {"kind": "continuous", "n": int(gen.shape[0]), "energy_distance": metrics.energy_distance(gen, ref)}
        if args.reference2:
            ref2 = datasets.read_points(args.reference2, gen.shape[1])
            report["energy_distance_reference_pair"] = metrics.energy_distance(ref, ref2)
    if args.output:
        write_json(args.output, report)
    return report


@command("render", "render 2-D points from --input as a binary PGM histogram")
def cmd_render(cfg, args):
    if not args.input:
        raise ConfigurationError("--input points CSV is required")
    pts = datasets.read_points(args.input)
    if pts.shape[1] != 2:
        raise ArgumentError("histograms need 2-D points")
    output = Path(args.output or Path(args.input).with_suffix(".pgm"))
    _render(cfg, pts, output)
    return {"image": str(output)}


# entry point ------------------------------------------------------------------------

EPILOG = """\
configuration:
  JSON via --config; any key can be overridden with --dot.path=value
  (values parsed as JSON when possible), e.g. --train.steps=500 --seed=1.
  A seed is mandatory.  Use --checkpoint=builtin:gaussian_oracle for the
  analytic Gaussian model (configured by oracle.mu, oracle.s2, scheduler).

exit codes:
  0 ok, 2 configuration error, 3 I/O error, 4 numeric/simulation error,
  5 incompatible checkpoint/parameterization/scheduler
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmkit", description=__doc__, epilog=EPILOG,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--checkpoint", help="checkpoint path or builtin:gaussian_oracle")
        p.add_argument("--input", help="input points / tokens file")
        p.add_argument("--reference", help="held-out reference data (eval)")
        p.add_argument("--reference2", help="second held-out draw for the noise floor (eval)")
        p.add_argument("--target", help="target pmf JSON (eval on tokens)")
        p.add_argument("--output", help="output file (default inside output_dir)")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        p.add_argument("--path-samples", action="store_true", help="dataset: dump PathSample rows instead")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args.command, args.config, parse_overrides(rest))
        result = COMMANDS[args.command][0](cfg, args)
    except FMKitError as err:
        print(f"fmkit: error: {err}", file=sys.stderr)
        return err.exit_code
    except (OSError, UnicodeDecodeError) as err:
        print(f"fmkit: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, TypeError, ValueError) as err:
        print(f"fmkit: configuration error: {err!r}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, FloatingPointError) as err:
        print(f"fmkit: numeric error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
