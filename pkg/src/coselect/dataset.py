"""Multi-view data model, hyperparameters, loading and synthesis.

Every view is stored as a ``(d_v, n)`` matrix: rows are features, columns
are instances. Instances are aligned across views.
"""

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, dump_kv, read_kv

NORMALIZE_MODES = ("none", "zscore", "unit-l2")
_NORMALIZE_ALIASES = {
    "none": "none",
    "zscore": "zscore",
    "zscore-per-feature": "zscore",
    "unit-l2": "unit-l2",
    "unit-l2-per-instance": "unit-l2",
}


class DatasetError(ValueError):
    """Raised when view files or a manifest cannot form a valid dataset."""


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MultiViewDataset:
    """V instance-aligned views plus optional evaluation labels.

    The solver only ever receives :attr:`views`; labels are kept here for
    the evaluation harness.
    """

    views: tuple
    labels: np.ndarray | None = None
    name: str = "dataset"

    def __post_init__(self):
        views = tuple(_frozen(np.atleast_2d(v)) for v in self.views)
        if not views:
            raise DatasetError("dataset needs at least one view")
        n = views[0].shape[1]
        for i, v in enumerate(views):
            if v.ndim != 2:
                raise DatasetError(f"view {i} is not a matrix")
            if v.shape[0] < 1 or v.size == 0:
                raise DatasetError(f"view {i} is empty")
            if v.shape[1] != n:
                raise DatasetError(
                    f"instance count mismatch: view 0 has {n} instances, view {i} has {v.shape[1]}"
                )
            if not np.all(np.isfinite(v)):
                raise DatasetError(f"view {i} contains non-finite entries")
        if n < 2:
            raise DatasetError("need at least 2 instances")
        object.__setattr__(self, "views", views)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.ndim != 1 or labels.shape[0] != n:
                raise DatasetError(f"labels have length {labels.size}, expected {n}")
            labels = labels.copy()
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return self.views[0].shape[1]

    @property
    def n_views(self):
        return len(self.views)

    @property
    def view_dims(self):
        return [v.shape[0] for v in self.views]

    @property
    def n_classes(self):
        return None if self.labels is None else len(np.unique(self.labels))

    def unlabeled(self):
        return MultiViewDataset(self.views, None, self.name)


@dataclass(frozen=True)
class Hyperparams:
    """Solver settings.

    ``c=None`` resolves to ``ceil(min(sqrt(n), min_v d_v))`` at fit time.
    ``w_step`` picks the projection update: ``"constrained"`` solves the
    reweighted trace problem under the orthogonality constraint exactly,
    ``"regression"`` is the spectral-regression closed form. ``consensus``
    picks how the per-view targets are averaged in the graph update.
    """

    r: float = 2.0
    theta: float = 0.1
    alpha: float = 1e-3
    c: int | None = None
    k: int = 5
    epsilon: float = 1e-8
    tol: float = 1e-6
    max_iter: int = 100
    seed: int = 0
    w_step: str = "constrained"
    consensus: str = "weighted"

    def __post_init__(self):
        if not self.r > 1:
            raise ValueError(f"r must be > 1, got {self.r}")
        for name in ("theta", "alpha", "epsilon", "tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.c is not None and int(self.c) < 1:
            raise ValueError(f"c must be a positive integer, got {self.c}")
        if int(self.k) < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if int(self.max_iter) < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.w_step not in ("constrained", "regression"):
            raise ValueError(f"unknown w_step {self.w_step!r}")
        if self.consensus not in ("weighted", "uniform"):
            raise ValueError(f"unknown consensus averaging {self.consensus!r}")

    def resolve(self, n, view_dims):
        """Return a copy with ``c`` filled in and checked against the data shape."""
        c = self.c
        if c is None:
            c = math.ceil(min(math.sqrt(n), min(view_dims)))
        c = int(c)
        if c > min(view_dims) or c > n:
            raise ValueError(f"c={c} exceeds min(d_v)={min(view_dims)} or n={n}")
        if self.k >= n:
            raise ValueError(f"k={self.k} must be < n={n}")
        return replace(self, c=c)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        casts = {"r": float, "theta": float, "alpha": float, "epsilon": float, "tol": float,
                 "k": int, "max_iter": int, "seed": int, "w_step": str, "consensus": str}
        kw = {}
        for key, value in d.items():
            if key == "c":
                kw["c"] = None if value in (None, "", "auto", "none") else int(value)
            elif key in casts:
                kw[key] = casts[key](value)
        return cls(**kw)


# -- loading ----------------------------------------------------------------

def _read_matrix(path, header):
    try:
        m = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2, dtype=np.float64)
    except FileNotFoundError:
        raise DatasetError(f"{path}: file not found") from None
    except ValueError as exc:
        raise DatasetError(f"{path}: non-numeric cell ({exc})") from None
    if m.size == 0:
        raise DatasetError(f"{path}: empty view")
    if not np.all(np.isfinite(m)):
        raise DatasetError(f"{path}: non-finite cell")
    return m


def _read_labels(path):
    try:
        tokens = Path(path).read_text().replace(",", "\n").split()
    except FileNotFoundError:
        raise DatasetError(f"{path}: file not found") from None
    try:
        return np.array([int(t) for t in tokens])
    except ValueError:
        return np.array(tokens)


def _flag(value, name, source):
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise DatasetError(f"{source}: {name} must be true/false, got {value!r}")


def load_dataset(manifest):
    """Load the dataset described by a key-value manifest file.

    Recognised keys: ``view`` (repeatable, in order), ``labels``,
    ``orientation`` (``features_x_instances`` or ``instances_x_features``),
    ``header`` (true/false) and ``name``. Relative paths resolve against
    the manifest's directory.
    """
    manifest = Path(manifest)
    if not manifest.is_file():
        raise DatasetError(f"{manifest}: manifest not found")
    kv = read_kv(manifest)
    base = manifest.parent
    view_paths = kv.get("view", [])
    for extra in kv.get("views", []):
        view_paths += [p.strip() for p in extra.split(",") if p.strip()]
    if not view_paths:
        raise DatasetError(f"{manifest}: lists no view files")
    orientation = kv.get("orientation", ["features_x_instances"])[-1].lower()
    if orientation not in ("features_x_instances", "instances_x_features"):
        raise DatasetError(f"{manifest}: unknown orientation {orientation!r}")
    header = _flag(kv.get("header", ["false"])[-1], "header", manifest)

    views = []
    for p in view_paths:
        m = _read_matrix(base / p, header)
        views.append(m.T if orientation == "instances_x_features" else m)
    ns = [v.shape[1] for v in views]
    if len(set(ns)) != 1:
        detail = ", ".join(f"{p}: {k}" for p, k in zip(view_paths, ns))
        raise DatasetError(f"{manifest}: instance count mismatch ({detail})")
    labels = None
    if "labels" in kv:
        labels = _read_labels(base / kv["labels"][-1])
        if labels.shape[0] != ns[0]:
            raise DatasetError(
                f"{base / kv['labels'][-1]}: {labels.shape[0]} labels for {ns[0]} instances"
            )
    name = kv.get("name", [manifest.stem])[-1]
    return MultiViewDataset(tuple(views), labels, name)


def save_dataset(ds, directory):
    """Write views (features x instances, round-trip exact), labels and a manifest."""
    directory = Path(directory)
    items = [("name", ds.name), ("orientation", "features_x_instances"), ("header", "false")]
    for i, v in enumerate(ds.views):
        fname = f"view{i}.csv"
        text = "\n".join(",".join(repr(float(x)) for x in row) for row in v) + "\n"
        atomic_write_text(directory / fname, text)
        items.append(("view", fname))
    if ds.labels is not None:
        atomic_write_text(directory / "labels.csv", "\n".join(str(x) for x in ds.labels) + "\n")
        items.append(("labels", "labels.csv"))
    path = directory / "manifest.txt"
    atomic_write_text(path, dump_kv(items))
    return path


# -- transforms -------------------------------------------------------------

def normalize_views(ds, mode="zscore", eps=1e-8):
    """Return a new dataset with each view transformed independently.

    ``zscore`` standardises every feature (row) with the population std;
    rows whose std is at most ``eps`` become zero. ``unit-l2`` scales each
    instance (column) to unit Euclidean norm, leaving zero columns alone.
    """
    try:
        mode = _NORMALIZE_ALIASES[mode]
    except KeyError:
        raise ValueError(f"unknown normalization {mode!r}; choose from {NORMALIZE_MODES}") from None
    if mode == "none":
        return ds
    out = []
    for X in ds.views:
        if mode == "zscore":
            mu = X.mean(axis=1, keepdims=True)
            sd = X.std(axis=1, keepdims=True)
            ok = sd > eps
            Z = np.where(ok, (X - mu) / np.where(ok, sd, 1.0), 0.0)
        else:
            norms = np.linalg.norm(X, axis=0, keepdims=True)
            Z = X / np.where(norms > 0, norms, 1.0)
        out.append(Z)
    return MultiViewDataset(tuple(out), ds.labels, ds.name)


def synthesize(n, view_dims, classes, noise=0.0, seed=0, separation=3.0, name=None):
    """Class-clustered multi-view data with known labels.

    Each class gets a latent mean; every view maps the latent space through
    its own random linear map and adds isotropic Gaussian noise. With
    ``noise=0`` all members of a class coincide in every view.
    """
    view_dims = [int(d) for d in view_dims]
    if classes < 2 or n < classes:
        raise ValueError(f"need n >= classes >= 2, got n={n}, classes={classes}")
    if not view_dims or min(view_dims) < 1:
        raise ValueError(f"view_dims must be positive, got {view_dims}")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    latent = classes
    labels = rng.permutation(np.arange(n) % classes)
    means = separation * rng.standard_normal((latent, classes))
    views = []
    for d in view_dims:
        A = rng.standard_normal((d, latent)) / math.sqrt(latent)
        X = A @ means[:, labels]
        if noise > 0:
            X = X + noise * rng.standard_normal((d, n))
        views.append(X)
    name = name or f"synth-n{n}-v{len(view_dims)}-c{classes}-s{seed}"
    return MultiViewDataset(tuple(views), labels, name)
