"""Run configuration: TOML loading, schema validation, flag overrides,
dataset resolution, and the config fingerprint that ties checkpoints,
reports, and reruns together."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .data import Dataset, MotifSpec, parse_tudataset, synth_motif_corpus
from .training import ABLATIONS, LossWeights
from .views import KINDS, ViewSpec


class ConfigError(ValueError):
    """Configuration violates the schema; the message names the field."""


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"          # "synthetic" or "tudataset"
    name: str = "motif"
    n_graphs: int = 100
    corpus_seed: int = 7
    shifted: bool = False
    root: str = ""                   # tudataset only
    limit: int = 0                   # 0 = all graphs

    def validate(self, where: str):
        if self.kind not in ("synthetic", "tudataset"):
            raise ConfigError(f"{where}.kind must be synthetic or tudataset")
        if self.kind == "synthetic":
            if self.n_graphs < 20 or self.n_graphs % 2:
                raise ConfigError(f"{where}.n_graphs must be even and >= 20")
        else:
            if not self.root:
                raise ConfigError(f"{where}.root is required for tudataset")
            if not os.path.isdir(self.root):
                raise ConfigError(f"{where}.root does not exist: {self.root}")
        if self.limit < 0:
            raise ConfigError(f"{where}.limit must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    source: DatasetConfig = field(default_factory=DatasetConfig)
    target: DatasetConfig | None = None
    seed: int = 0
    folds: int = 10
    epochs: int = 100
    adapt_epochs: int = 100
    output_dir: str = "runs/out"
    ablation: str = "none"
    lr: float = 0.001
    batch_size: int = 32
    hidden: int = 64
    adapter_width: int = 32
    proj_dim: int = 32
    pooling: str = "mean"
    kernel: str = "rbf"
    bandwidth: str | float = "median"
    ssr_refresh: bool = False
    weights: LossWeights = field(default_factory=LossWeights)
    views: tuple[ViewSpec, ...] = ()

    def __post_init__(self):
        if not self.views:
            object.__setattr__(self, "views",
                               (ViewSpec("node-drop", 0.1, 0),
                                ViewSpec("edge-perturb", 0.1, 1)))

    def validate(self):
        self.source.validate("source")
        if self.target is not None:
            self.target.validate("target")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.epochs < 0 or self.adapt_epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.pooling not in ("mean", "sum", "max"):
            raise ConfigError("pooling must be mean, sum, or max")
        if self.kernel not in ("rbf", "linear"):
            raise ConfigError("kernel must be rbf or linear")
        if isinstance(self.bandwidth, str) and self.bandwidth != "median":
            raise ConfigError("bandwidth must be a positive number or 'median'")
        if len(self.views) < 2:
            raise ConfigError("views must list at least 2 entries")
        return self

    def as_dict(self) -> dict:
        blob = {
            "source": asdict(self.source),
            "target": asdict(self.target) if self.target else None,
            "weights": asdict(self.weights),
            "views": [asdict(v) for v in self.views],
        }
        for key in ("seed", "folds", "epochs", "adapt_epochs", "output_dir",
                    "ablation", "lr", "batch_size", "hidden", "adapter_width",
                    "proj_dim", "pooling", "kernel", "bandwidth", "ssr_refresh"):
            blob[key] = getattr(self, key)
        return blob

    def fingerprint(self) -> str:
        """Hash of everything that shapes the pretrained artifact; the
        output location and adaptation-only knobs (ablation flag, adapt
        epoch count, refresh schedule) stay out so one checkpoint serves
        every ablation row."""
        blob = self.as_dict()
        for key in ("output_dir", "ablation", "adapt_epochs", "ssr_refresh"):
            blob.pop(key)
        return hashlib.sha256(
            json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


def _dataset_from_table(table: dict, where: str) -> DatasetConfig:
    allowed = {"kind", "name", "n_graphs", "corpus_seed", "shifted", "root", "limit"}
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key {where}.{sorted(unknown)[0]}")
    return DatasetConfig(**table)


def load_config(path: str, overrides: dict | None = None) -> RunConfig:
    """Parse TOML, apply CLI overrides (flag > file > default), validate."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file does not exist: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"config parse error: {err}") from None
    return build_config(raw, overrides)


def build_config(raw: dict, overrides: dict | None = None) -> RunConfig:
    run = dict(raw.get("run", {}))
    allowed = {"seed", "folds", "epochs", "adapt_epochs", "output_dir",
               "ablation", "lr", "batch_size", "hidden", "adapter_width",
               "proj_dim", "pooling", "kernel", "bandwidth", "ssr_refresh"}
    unknown = set(run) - allowed
    if unknown:
        raise ConfigError(f"unknown key run.{sorted(unknown)[0]}")
    for key, value in (overrides or {}).items():
        if value is not None:
            run[key] = value

    kwargs: dict = dict(run)
    if "datasets" in raw:
        ds_tables = raw["datasets"]
        if "source" in ds_tables:
            kwargs["source"] = _dataset_from_table(ds_tables["source"], "source")
        if "target" in ds_tables:
            kwargs["target"] = _dataset_from_table(ds_tables["target"], "target")
    if "weights" in raw:
        wt = raw["weights"]
        allowed_w = {f for f in LossWeights.__dataclass_fields__}
        unknown = set(wt) - allowed_w
        if unknown:
            raise ConfigError(f"unknown key weights.{sorted(unknown)[0]}")
        try:
            kwargs["weights"] = LossWeights(**wt)
        except ValueError as err:
            raise ConfigError(f"weights: {err}") from None
    if "views" in raw:
        specs = []
        for i, v in enumerate(raw["views"]):
            if v.get("kind") not in KINDS:
                raise ConfigError(f"views[{i}].kind must be one of {KINDS}")
            try:
                specs.append(ViewSpec(v["kind"], float(v.get("rate", 0.1)),
                                      int(v.get("seed_stream", i))))
            except ValueError as err:
                raise ConfigError(f"views[{i}]: {err}") from None
        kwargs["views"] = tuple(specs)
    try:
        cfg = RunConfig(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None
    return cfg.validate()


def load_dataset(dc: DatasetConfig) -> Dataset:
    if dc.kind == "synthetic":
        spec = MotifSpec()
        if dc.shifted:
            spec = spec.shifted()
        ds = synth_motif_corpus(dc.n_graphs, dc.corpus_seed, spec, name=dc.name)
    else:
        ds = parse_tudataset(dc.root, dc.name)
    if dc.limit and dc.limit < len(ds.graphs):
        sliced = ds.graphs[:dc.limit]
        present = sorted({g.label for g in sliced})
        if len(present) < ds.num_classes:
            raise ConfigError(f"limit={dc.limit} drops a class from {dc.name}")
        ds = Dataset(sliced, ds.num_classes, ds.feature_dim, ds.name)
    return ds
