"""Config-driven experiment runner.

A pipeline config names one experiment, the model (a weight seed or an
EVIT file), the inputs (image files or seeded synthetic images) and an
experiment parameter block. Everything is validated before any computation
starts. Each experiment returns its output files in memory; they are written
in sorted order together with ``manifest.json``.
"""

from __future__ import annotations

import hashlib
import io as _stdio
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as eio
from .classify import TEMPERATURE, build_anchor_set, nearest_anchor_classify
from .lipschitz import (DEFAULT_EPS, DEFAULT_GRID, direction_suite, hist_csv, ldlc_csv,
                        ldlc_distribution)
from .matching import (DivergenceError, MatchConfig, match_embedding, match_gradient,
                       perturbation_report)
from .paths import interpolate_trace, linear_fit_r2, null_walk
from .spectral import analyze
from .synthetic import CLASSES, class_images, make_image
from .tensor import Rng, SvdConvergenceError, write_emat
from .vit import ConfigError, VitConfig, embed, init_weights

log = logging.getLogger(__name__)

EXPERIMENTS = ("spectrum", "ldlc", "match", "interpolate", "walk", "classify")
EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4


class ValidationError(ValueError):
    pass


@dataclass
class PipelineConfig:
    experiment: str
    model: dict = field(default_factory=lambda: {"weights_seed": 0})
    inputs: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - {"experiment", "model", "inputs", "params", "output_dir", "seed"}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "experiment" not in d:
            raise ValidationError("config needs an 'experiment'")
        cfg = cls(**d)
        if base_dir is not None:
            cfg = cfg.resolve_paths(Path(base_dir))
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, base_dir=path.parent)

    def resolve_paths(self, base: Path) -> "PipelineConfig":
        def fix(p):
            p = Path(p)
            return str(p if p.is_absolute() else base / p)

        model = dict(self.model)
        if "weights_file" in model:
            model["weights_file"] = fix(model["weights_file"])
        inputs = [dict(item, path=fix(item["path"])) if "path" in item else dict(item)
                  for item in self.inputs]
        return PipelineConfig(self.experiment, model, inputs, dict(self.params),
                              self.output_dir, self.seed)

    def as_dict(self) -> dict:
        return {"experiment": self.experiment, "model": self.model, "inputs": self.inputs,
                "params": self.params, "output_dir": self.output_dir, "seed": self.seed}


@dataclass
class Context:
    cfg: PipelineConfig
    config: VitConfig
    weights: object
    inputs: list  # dicts with "image" plus the original entry fields
    params: dict

    @property
    def rng(self) -> Rng:
        return Rng(self.cfg.seed)


# -- validation ---------------------------------------------------------------

DEFAULT_INPUTS = {
    "spectrum": [{"synthetic": "stripes", "seed": 11}],
    "ldlc": [{"synthetic": "stripes", "seed": 11}],
    "walk": [{"synthetic": "stripes", "seed": 11}],
    "match": [{"synthetic": "stripes", "seed": 11}, {"synthetic": "checkers", "seed": 12}],
    "interpolate": [{"synthetic": "stripes", "seed": 11}, {"synthetic": "checkers", "seed": 12}],
    "classify": [
        {"synthetic": "stripes", "seed": 21, "role": "original", "label": "stripes"},
        {"synthetic": "checkers", "seed": 31, "role": "target", "label": "checkers"},
        {"synthetic": "checkers", "seed": 22, "role": "original", "label": "checkers"},
        {"synthetic": "disks", "seed": 32, "role": "target", "label": "disks"},
        {"synthetic": "disks", "seed": 23, "role": "original", "label": "disks"},
        {"synthetic": "stripes", "seed": 33, "role": "target", "label": "stripes"},
    ],
}
MIN_INPUTS = {"spectrum": 1, "ldlc": 1, "walk": 1, "match": 2, "interpolate": 2, "classify": 2}


def _load_model(model: dict):
    if "weights_file" in model:
        path = Path(model["weights_file"])
        if not path.is_file():
            raise ValidationError(f"weights file not found: {path}")
        try:
            config, weights = eio.load_weights(path)
        except (eio.ParseError, ValueError) as exc:
            raise ValidationError(f"weights file {path}: {exc}") from None
        if "config" in model and VitConfig(**model["config"]) != config:
            raise ValidationError("weights file config disagrees with model.config")
        return config, weights
    try:
        config = VitConfig(**model.get("config", {}))
    except (TypeError, ConfigError) as exc:
        raise ValidationError(f"model.config: {exc}") from None
    return config, init_weights(config, Rng(int(model.get("weights_seed", 0))))


def _load_input(item: dict, config: VitConfig) -> np.ndarray:
    if "path" in item:
        path = Path(item["path"])
        if not path.is_file():
            raise ValidationError(f"input file not found: {path}")
        try:
            return eio.load_image(path, config)
        except ValueError as exc:
            raise ValidationError(f"input {path}: {exc}") from None
    if "synthetic" in item:
        if item["synthetic"] not in CLASSES:
            raise ValidationError(f"unknown synthetic class {item['synthetic']!r}")
        return make_image(item["synthetic"], int(item.get("seed", 0)),
                          config.image_size, config.channels)
    raise ValidationError(f"input entry needs 'path' or 'synthetic': {item}")


def validate(cfg: PipelineConfig) -> Context:
    if cfg.experiment not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment {cfg.experiment!r}; choose from {EXPERIMENTS}")
    config, weights = _load_model(cfg.model)
    items = cfg.inputs or DEFAULT_INPUTS[cfg.experiment]
    if len(items) < MIN_INPUTS[cfg.experiment]:
        raise ValidationError(f"{cfg.experiment} needs at least {MIN_INPUTS[cfg.experiment]} inputs")
    inputs = [dict(item, image=_load_input(item, config)) for item in items]
    if cfg.experiment == "classify":
        roles = [i.get("role") for i in inputs]
        if roles.count("original") != roles.count("target") or not roles.count("original"):
            raise ValidationError("classify needs matching numbers of 'original' and 'target' inputs")
        if any("label" not in i for i in inputs):
            raise ValidationError("classify inputs need a 'label'")
    return Context(cfg, config, weights, inputs, dict(cfg.params))


# -- experiments --------------------------------------------------------------

def _match_config(params: dict, **defaults) -> MatchConfig:
    keys = ("learning_rate", "max_iters", "loss_tol", "cos_tol", "perturb_budget", "record_every")
    merged = dict(defaults)
    merged.update({k: params[k] for k in keys if k in params})
    return MatchConfig(**merged)


def _emat(x) -> bytes:
    buf = _stdio.BytesIO()
    write_emat(x, buf)
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def spectrum_experiment(ctx: Context) -> dict:
    files = {}
    multi = len(ctx.inputs) > 1
    for i, item in enumerate(ctx.inputs):
        svd = analyze(ctx.weights, ctx.config, item["image"])
        tag = f"-{i}" if multi else ""
        files[f"svd-report{tag}.json"] = _json(svd.report())
        files[f"spectrum{tag}.csv"] = svd.spectrum_csv()
    return files


def optimized_directions(weights, config, x0, count, seed=1000):
    """Unit matching-gradient directions at ``x0`` towards seeded synthetic targets."""
    out = []
    for i in range(count):
        target = embed(make_image(CLASSES[i % len(CLASSES)], seed + i,
                                  config.image_size, config.channels), weights, config)
        g = match_gradient(weights, config, x0, target)
        norm = np.linalg.norm(g)
        if norm > 0:
            out.append(("optimized", g / norm))
    return out


def ldlc_experiment(ctx: Context, return_distributions=False):
    p = ctx.params
    x0 = ctx.inputs[0]["image"].reshape(-1)
    eps = float(p.get("epsilon", DEFAULT_EPS))
    grid_n = int(p.get("grid_n", DEFAULT_GRID))
    counts = {"singular": int(p.get("singular", 5)), "random": int(p.get("random", 200)),
              "null": int(p.get("null", 200))}
    svd = analyze(ctx.weights, ctx.config, x0)
    directions, skipped = direction_suite(svd, ctx.rng, counts)
    directions += optimized_directions(ctx.weights, ctx.config, x0, int(p.get("optimized", 200)),
                                       int(p.get("target_seed", 1000)))
    dists = ldlc_distribution(ctx.weights, ctx.config, x0, directions, eps, grid_n)
    summary = {fam: {k: v for k, v in d.summary.items() if k not in ("bin_edges", "counts")}
               for fam, d in dists.items()}
    summary["_sigma"] = [float(s) for s in svd.s]
    summary["_skipped_null"] = skipped
    files = {
        "ldlc-report.csv": ldlc_csv(dists),
        "ldlc-hist.csv": hist_csv(dists),
        "ldlc-summary.json": _json(summary),
    }
    return (files, dists, svd) if return_distributions else files


def match_experiment(ctx: Context) -> dict:
    x0 = ctx.inputs[0]["image"]
    target = embed(ctx.inputs[1]["image"], ctx.weights, ctx.config)
    mcfg = _match_config(ctx.params)
    x_star, trace = match_embedding(ctx.weights, ctx.config, x0, target, mcfg)
    report = perturbation_report(x0, x_star, float(ctx.params.get("diff_scale", 50.0)))
    files = {
        "match-trace.csv": trace.csv_text(),
        "x_star.emat": _emat(x_star),
        "perturbation.json": _json({
            "mean_abs": report["mean_abs"], "max_abs": report["max_abs"], "linf": report["linf"],
            "converged": trace.converged, "stop_reason": trace.stop_reason,
            "iterations": trace.final_iter, "final_cosine": trace.cosine[-1],
            "clamp_events": trace.clamp_events,
        }),
    }
    if ctx.config.channels == 3:
        files["x_star.ppm"] = eio.encode_ppm(x_star.reshape(ctx.config.image_shape))
        files["diff.ppm"] = eio.encode_ppm(report["diff_image"].reshape(ctx.config.image_shape))
    return files


def interpolate_experiment(ctx: Context) -> dict:
    xa = ctx.inputs[0]["image"]
    xb = ctx.inputs[1]["image"]
    if ctx.params.get("match_first", True):
        target = embed(xb, ctx.weights, ctx.config)
        xb, _ = match_embedding(ctx.weights, ctx.config, xa, target, _match_config(ctx.params))
    frames = [] if ctx.params.get("frames") else None
    trace = interpolate_trace(ctx.weights, ctx.config, xa, xb, int(ctx.params.get("steps", 20)), frames)
    files = {
        "path-trace.csv": trace.csv_text(),
        "path-summary.json": _json({"r2_cos_to_b": linear_fit_r2(trace.t, trace.cos_to_b),
                                    "r2_cos_to_a": linear_fit_r2(trace.t, trace.cos_to_a)}),
    }
    if frames is not None and ctx.config.channels == 3:
        for i, fr in enumerate(frames):
            files[f"frames/frame_{i:03d}.ppm"] = eio.encode_ppm(fr.reshape(ctx.config.image_shape))
    return files


def walk_experiment(ctx: Context) -> dict:
    p = ctx.params
    x0 = ctx.inputs[0]["image"].reshape(-1)
    rank_cut = p.get("rank_cut")
    trace = null_walk(ctx.weights, ctx.config, x0, float(p.get("step_len", 0.5)),
                      int(p.get("n_steps", 50)), None if rank_cut is None else int(rank_cut),
                      ctx.rng, float(p.get("drift_cap", 0.05)), bool(p.get("straight", True)))
    sigma_max = analyze(ctx.weights, ctx.config, x0).sigma_max
    files = {
        "walk-trace.csv": trace.csv_text(),
        "x_final.emat": _emat(trace.inputs[-1]),
        "walk-summary.json": _json({
            "input_disp": trace.input_disp[-1], "embed_drift": trace.embed_drift[-1],
            "sigma_max": sigma_max, "reprojections": trace.reprojections[-1],
            "clamped_steps": int(sum(trace.clamped)),
        }),
    }
    if ctx.config.channels == 3:
        files["x_final.ppm"] = eio.encode_ppm(trace.inputs[-1].reshape(ctx.config.image_shape))
    return files


def classify_experiment(ctx: Context, return_rows=False):
    """Match each original to a target exemplar and classify both against class anchors."""
    p = ctx.params
    per_class = int(p.get("anchors_per_class", 5))
    anchor_imgs = class_images(int(p.get("anchor_seed", 1)), per_class,
                               ctx.config.image_size, ctx.config.channels)
    anchors = build_anchor_set(ctx.weights, ctx.config, anchor_imgs)
    mcfg = _match_config(p, cos_tol=0.99, max_iters=5000)
    originals = [i for i in ctx.inputs if i.get("role") == "original"]
    targets = [i for i in ctx.inputs if i.get("role") == "target"]

    rows = []
    for k, (orig, tgt) in enumerate(zip(originals, targets)):
        x0 = orig["image"]
        x_star, trace = match_embedding(ctx.weights, ctx.config, x0,
                                        embed(tgt["image"], ctx.weights, ctx.config), mcfg)
        stats = perturbation_report(x0, x_star)
        for kind, img, expected in (("original", x0, orig["label"]),
                                    ("matched", x_star, tgt["label"])):
            label, cos, probs = nearest_anchor_classify(embed(img, ctx.weights, ctx.config), anchors)
            rows.append({"pair": k, "kind": kind, "expected": expected, "predicted": label,
                         "cosines": [float(c) for c in cos], "scores": [float(s) for s in probs],
                         "mean_abs_delta": 0.0 if kind == "original" else stats["mean_abs"],
                         "max_abs_delta": 0.0 if kind == "original" else stats["max_abs"],
                         "match_cosine": trace.cosine[-1]})

    lines = ["pair,kind,expected,predicted,mean_abs_delta,max_abs_delta,"
             + ",".join(f"score_{l}" for l in anchors.labels)]
    for r in rows:
        lines.append(f"{r['pair']},{r['kind']},{r['expected']},{r['predicted']},"
                     f"{r['mean_abs_delta']:.17g},{r['max_abs_delta']:.17g},"
                     + ",".join(f"{s:.17g}" for s in r["scores"]))
    files = {
        "classification.csv": "\n".join(lines) + "\n",
        "classification-matrix.json": _json({
            "labels": list(anchors.labels), "temperature": TEMPERATURE,
            "rows": [{k: r[k] for k in ("pair", "kind", "expected", "predicted", "scores")}
                     for r in rows],
            "correct": sum(r["expected"] == r["predicted"] for r in rows),
            "total": len(rows),
        }),
        "anchors.emat": _emat(anchors.anchors),
    }
    return (files, rows, anchors) if return_rows else files


RUNNERS = {
    "spectrum": spectrum_experiment,
    "ldlc": ldlc_experiment,
    "match": match_experiment,
    "interpolate": interpolate_experiment,
    "walk": walk_experiment,
    "classify": classify_experiment,
}


# -- running ------------------------------------------------------------------

def _write_files(out: Path, files: dict) -> dict:
    checksums = {}
    for name in sorted(files):
        data = files[name]
        if isinstance(data, str):
            data = data.encode()
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        checksums[name] = hashlib.sha256(data).hexdigest()
    return checksums


def _fail(out: Path, code: int, kind: str, exc: Exception) -> int:
    payload = {"status": "error", "exit_code": code, "kind": kind, "message": str(exc)}
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(text + "\n")
    except OSError:
        pass
    return code


def run_pipeline(cfg: PipelineConfig) -> int:
    """Validate, run and write one experiment. Returns the process exit status."""
    out = Path(cfg.output_dir)
    start = time.perf_counter()
    try:
        ctx = validate(cfg)
    except (ValidationError, ConfigError, ValueError, TypeError) as exc:
        return _fail(out, EXIT_VALIDATION, "validation", exc)
    try:
        files = RUNNERS[cfg.experiment](ctx)
    except (DivergenceError, SvdConvergenceError, ArithmeticError) as exc:
        return _fail(out, EXIT_DIVERGENCE, "numeric", exc)
    except (ConfigError, ValueError) as exc:
        return _fail(out, EXIT_VALIDATION, "validation", exc)
    try:
        out.mkdir(parents=True, exist_ok=True)
        checksums = _write_files(out, files)
        manifest = {
            "experiment": cfg.experiment,
            "config": cfg.as_dict(),
            "model_config": ctx.config.as_dict(),
            "seeds": {"pipeline": cfg.seed, "weights": cfg.model.get("weights_seed")},
            "softmax_temperature": TEMPERATURE,
            "artifacts": checksums,
            "wall_time_s": time.perf_counter() - start,
        }
        (out / "manifest.json").write_text(_json(manifest))
    except OSError as exc:
        return _fail(out, EXIT_IO, "io", exc)
    log.info("%s finished in %.2fs, %d files", cfg.experiment, time.perf_counter() - start, len(files))
    return EXIT_OK
