"""Command-line front end.

Every command reads one key-value config file (see ``RunConfig``), applies
flag overrides, writes its artifacts into ``--out`` and leaves a
``config.txt`` there that replays the run.
"""

import argparse
import io
import logging
import os
import sys
import traceback
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes, atomic_write_text, dump_kv, read_kv, write_csv, write_json
from .dataset import Hyperparams, load_dataset, normalize_views, save_dataset, synthesize
from .evaluation import CLASSIFIERS, SWEEP_COLUMNS, ratio_sweep
from .selection import select
from .solver import TERMS, VARIANTS, ConvergenceTrace, SolverError, fit_variant

log = logging.getLogger("coselect")

COMMANDS = ("fit", "select", "eval", "sweep", "ablate", "synth")
_HP_KEYS = {f.name for f in fields(Hyperparams)}


def _floats(s):
    return [float(x) for x in str(s).split(",") if x.strip()]


def _ints(s):
    return [int(x) for x in str(s).split(",") if x.strip()]


def _bool(s):
    return str(s).strip().lower() in ("1", "true", "yes", "on")


@dataclass
class RunConfig:
    """Everything needed to replay a run. ``manifest`` wins over the synth_* keys."""

    manifest: str | None = None
    synth_n: int = 60
    synth_dims: list = field(default_factory=lambda: [20, 30])
    synth_classes: int = 3
    synth_noise: float = 1.0
    synth_seed: int = 0
    normalize: str = "zscore"
    hp: Hyperparams = field(default_factory=Hyperparams)
    variant: str = "full"
    feature_ratio: float = 0.3
    instance_ratio: float = 0.2
    feature_ratios: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5])
    instance_ratios: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5])
    classifier: str = "one-nn"
    repeats: int = 1
    normalize_features: bool = False

    _CASTS = {
        "manifest": str, "synth_n": int, "synth_dims": _ints, "synth_classes": int,
        "synth_noise": float, "synth_seed": int, "normalize": str, "variant": str,
        "feature_ratio": float, "instance_ratio": float, "feature_ratios": _floats,
        "instance_ratios": _floats, "classifier": str, "repeats": int,
        "normalize_features": _bool,
    }

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.classifier not in CLASSIFIERS:
            raise ValueError(f"unknown classifier {self.classifier!r}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        for r in [self.feature_ratio, self.instance_ratio, *self.feature_ratios, *self.instance_ratios]:
            if not 0 < r <= 1:
                raise ValueError(f"ratio {r} outside (0, 1]")
        return self

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"{path}: config file not found")
        kv = {k: v[-1] for k, v in read_kv(path).items()}
        if "manifest" in kv and kv["manifest"]:
            m = Path(kv["manifest"])
            kv["manifest"] = str(m if m.is_absolute() else (path.parent / m).resolve())
        return cls.from_dict(kv)

    @classmethod
    def from_dict(cls, kv):
        kw, hp = {}, {}
        for key, value in kv.items():
            if key in _HP_KEYS:
                hp[key] = value
            elif key in cls._CASTS:
                kw[key] = cls._CASTS[key](value) if value not in ("", "none", None) or key != "manifest" else None
            else:
                raise ValueError(f"unknown config key {key!r}")
        return cls(hp=Hyperparams.from_dict(hp), **kw).validate()

    def items(self):
        out = [("manifest", self.manifest or "")]
        for f in fields(self):
            if f.name in ("manifest", "hp"):
                continue
            out.append((f.name, getattr(self, f.name)))
        for key, value in self.hp.to_dict().items():
            out.append((key, "auto" if value is None else value))
        return out

    def dump(self):
        return dump_kv(self.items())


def load_data(cfg):
    if cfg.manifest:
        ds = load_dataset(cfg.manifest)
    else:
        ds = synthesize(cfg.synth_n, cfg.synth_dims, cfg.synth_classes, cfg.synth_noise, cfg.synth_seed)
    return normalize_views(ds, cfg.normalize, cfg.hp.epsilon)


def resolved_hp(cfg, ds):
    """Projection dimension defaults to the class count when labels exist."""
    hp = cfg.hp
    if hp.c is None and ds.labels is not None:
        hp = replace(hp, c=min(ds.n_classes, min(ds.view_dims), ds.n))
    return hp.resolve(ds.n, ds.view_dims)


def _trace_csv(path, trace):
    write_csv(path, list(ConvergenceTrace.COLUMNS), trace.rows())


def _write_fit(out, ds, hp, state, trace):
    _trace_csv(out / "trace.csv", trace)
    summary = state.summary(ds.views)
    summary.update({"iterations": trace.n_iter, "converged": trace.converged,
                    "final_objective": float(trace.objectives[-1]), "hyperparams": hp.to_dict()})
    write_json(out / "state.json", summary)
    buf = io.BytesIO()
    np.savez(buf, **state.arrays())
    atomic_write_bytes(out / "state.npz", buf.getvalue())


def cmd_synth(cfg, out, args):
    ds = synthesize(cfg.synth_n, cfg.synth_dims, cfg.synth_classes, cfg.synth_noise, cfg.synth_seed)
    path = save_dataset(ds, out)
    print(path)


def cmd_fit(cfg, out, args):
    ds = load_data(cfg)
    hp = resolved_hp(cfg, ds)
    state, trace = fit_variant(ds.unlabeled(), hp, cfg.variant)
    _write_fit(out, ds, hp, state, trace)
    print(f"{trace.n_iter} iterations, objective {trace.objectives[-1]:.12g}, "
          f"converged={trace.converged}")
    return ds, hp, state


def cmd_select(cfg, out, args):
    ds, hp, state = cmd_fit(cfg, out, args)
    sel = select(state, cfg.feature_ratio, cfg.instance_ratio, hp.epsilon, cfg.normalize_features)
    sel.write(out)
    print(f"selected {len(sel.selected_instances)} instances, "
          f"{sum(len(s) for s in sel.selected_features)} features")


def _sweep_rows(cfg, ds, hp, frs, irs, variant):
    return ratio_sweep(ds, hp, frs, irs, cfg.repeats, cfg.classifier, variant, jobs=_jobs(cfg))


def _jobs(cfg):
    return getattr(cfg, "_jobs", 1)


def _write_table(out, stem, rows):
    write_csv(out / f"{stem}.csv", list(SWEEP_COLUMNS), [[r[c] for c in SWEEP_COLUMNS] for r in rows])
    write_json(out / f"{stem}.json", rows)


def cmd_eval(cfg, out, args):
    ds = load_data(cfg)
    if ds.labels is None:
        raise ValueError("eval needs a labels file in the manifest")
    hp = resolved_hp(cfg, ds)
    rows = _sweep_rows(cfg, ds, hp, [cfg.feature_ratio], [cfg.instance_ratio], cfg.variant)
    _write_table(out, "eval", rows)
    print(f"acc={rows[0]['acc']:.6g} f1={rows[0]['f1']:.6g}")


def cmd_sweep(cfg, out, args):
    ds = load_data(cfg)
    if ds.labels is None:
        raise ValueError("sweep needs a labels file in the manifest")
    hp = resolved_hp(cfg, ds)
    rows = _sweep_rows(cfg, ds, hp, cfg.feature_ratios, cfg.instance_ratios, cfg.variant)
    _write_table(out, "sweep", rows)
    print(f"{len(rows)} grid cells written")


ABLATION_LABELS = {"full": "full", "no-graph": "variant-I", "no-consensus": "variant-II"}


def cmd_ablate(cfg, out, args):
    ds = load_data(cfg)
    if ds.labels is None:
        raise ValueError("ablate needs a labels file in the manifest")
    hp = resolved_hp(cfg, ds)
    results = {}
    for variant in VARIANTS:
        rows = _sweep_rows(cfg, ds, hp, [cfg.feature_ratio], [cfg.instance_ratio], variant)
        results[variant] = rows[0]
    table = []
    for metric in ("acc", "f1"):
        for variant in VARIANTS:
            table.append([metric, ABLATION_LABELS[variant], results[variant][metric]])
    write_csv(out / "ablation.csv", ["metric", "variant", ds.name], table)
    write_json(out / "ablation.json", {ABLATION_LABELS[v]: results[v] for v in VARIANTS})
    for row in table:
        print(f"{row[0]:4s} {row[1]:11s} {row[2]:.6g}")


_HANDLERS = {"fit": cmd_fit, "select": cmd_select, "eval": cmd_eval,
             "sweep": cmd_sweep, "ablate": cmd_ablate, "synth": cmd_synth}


def build_parser():
    p = argparse.ArgumentParser(prog="coselect",
                                description="Multi-view unsupervised feature and instance co-selection.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key-value run config; defaults are used when omitted")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="solver seed override")
    p.add_argument("--jobs", type=int, default=1, help="parallel fits for repeats")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--feature-ratio", type=float)
    p.add_argument("--instance-ratio", type=float)
    p.add_argument("--classifier", choices=CLASSIFIERS)
    return p


def _setup_logging():
    level = os.environ.get("COSELECT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        over = {}
        if args.seed is not None:
            over["hp"] = replace(cfg.hp, seed=args.seed)
        for name in ("variant", "feature_ratio", "instance_ratio", "classifier"):
            if getattr(args, name) is not None:
                over[name] = getattr(args, name)
        cfg = replace(cfg, **over).validate()
    except (OSError, ValueError) as exc:
        print(f"coselect: error: {exc}", file=sys.stderr)
        return 2
    cfg._jobs = max(1, args.jobs)

    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED.txt"
    if marker.exists():
        marker.unlink()
    try:
        atomic_write_text(out / "config.txt", cfg.dump())
        _HANDLERS[args.command](cfg, out, args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a flagged exit
        detail = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        written = sorted(p.name for p in out.iterdir() if p.name != marker.name)
        text = f"command: {args.command}\nerror: {detail}\npartial outputs: {', '.join(written) or 'none'}\n"
        if isinstance(exc, SolverError) and exc.trace is not None and exc.trace.records:
            _trace_csv(out / "trace.csv", exc.trace)
        atomic_write_text(marker, text)
        print(f"coselect: error: {detail}", file=sys.stderr)
        log.debug("traceback:\n%s", traceback.format_exc())
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
