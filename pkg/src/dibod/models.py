"""Teacher multi-view encoder/decoder and the two student heads.

The teacher encodes every augmented view with its own graph-convolution
stack, fuses per-node encodings with softmaxed view weights (dropped nodes
are masked out with per-node renormalization), passes the fusion through a
Gaussian head, mean-pools per graph, and decodes each view back to its
input features.  The students map pooled teacher embeddings to the
invariant and redundant subspaces with classifier and projection heads.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .data import GraphBatch
from .mi import kl_compression
from .nn import Linear, Mlp, params_checksum
from .views import ViewSet


def gcn_layer(h: Tensor, prop: np.ndarray, w: Tensor) -> Tensor:
    """ReLU(S h w) with S the symmetric-normalized self-looped adjacency."""
    if h.data.shape[1] != w.data.shape[0]:
        raise ad.DimensionError(f"gcn_layer width {h.data.shape[1]} vs {w.data.shape[0]}")
    return ad.relu(ad.matmul(ad.matmul(Tensor(prop), h), w))


class GcnStack:
    """Three graph-convolution layers, shared width."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        self.weights = [ad.parameter((d_in, hidden), rng=rng),
                        ad.parameter((hidden, hidden), rng=rng),
                        ad.parameter((hidden, hidden), rng=rng)]

    def __call__(self, feats: Tensor, prop: np.ndarray) -> Tensor:
        h = feats
        for w in self.weights:
            h = gcn_layer(h, prop, w)
        return h

    def params(self) -> list[Tensor]:
        return list(self.weights)


class TeacherModel:
    def __init__(self, feature_dims: dict[str, int], num_classes: int,
                 num_views: int, rng: np.random.Generator,
                 adapter_width: int = 32, hidden: int = 64,
                 pooling: str = "mean"):
        if pooling not in ("mean", "sum", "max"):
            raise ValueError(f"unknown pooling {pooling!r}")
        self.adapter_width = adapter_width
        self.hidden = hidden
        self.num_views = num_views
        self.num_classes = num_classes
        self.pooling = pooling
        self.adapters = {name: Linear(d, adapter_width, rng)
                         for name, d in sorted(feature_dims.items())}
        self.encoders = [GcnStack(adapter_width, hidden, rng)
                         for _ in range(num_views)]
        self.fusion_raw = ad.parameter(np.zeros((1, num_views)))
        self.mu_head = Linear(hidden, hidden, rng)
        # start the head confidently narrow (prior mismatch ~0.18 nat/dim):
        # training then shows compression being traded against prediction
        # instead of starting degenerate at the prior
        self.logvar_head = Linear(hidden, hidden, rng)
        self.logvar_head.b.data = np.full((1, hidden), -1.0)
        self.decoders = {name: [Mlp([hidden, hidden, d], rng) for _ in range(num_views)]
                         for name, d in sorted(feature_dims.items())}
        self.classifier = Linear(hidden, num_classes, rng)

    def fusion_weights(self) -> Tensor:
        return ad.softmax_rows(self.fusion_raw)

    def params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for name in sorted(self.adapters):
            out += self.adapters[name].params()
        for enc in self.encoders:
            out += enc.params()
        out.append(self.fusion_raw)
        out += self.mu_head.params() + self.logvar_head.params()
        for name in sorted(self.decoders):
            for dec in self.decoders[name]:
                out += dec.params()
        out += self.classifier.params()
        return out

    def checksum(self) -> str:
        return params_checksum(self.params())


class StudentModel:
    def __init__(self, num_classes: int, rng: np.random.Generator,
                 hidden: int = 64, proj_dim: int = 32):
        self.hidden = hidden
        self.vs_head = Mlp([hidden, hidden, hidden], rng)
        self.vr_head = Mlp([hidden, hidden, hidden], rng)
        self.vs_classifier = Linear(hidden, num_classes, rng)
        self.vr_classifier = Linear(hidden, num_classes, rng)
        self.vs_projection = Linear(hidden, proj_dim, rng, bias=False)
        self.vr_projection = Linear(hidden, proj_dim, rng, bias=False)
        self.teacher_projection = Linear(hidden, proj_dim, rng, bias=False)

    def params(self) -> list[Tensor]:
        return (self.vs_head.params() + self.vr_head.params()
                + self.vs_classifier.params() + self.vr_classifier.params()
                + self.vs_projection.params() + self.vr_projection.params()
                + self.teacher_projection.params())

    def checksum(self) -> str:
        return params_checksum(self.params())


@dataclass
class TeacherOutput:
    z_nodes: Tensor        # (N_base, hidden) fused per-node embedding
    z_graph: Tensor        # (G, hidden) pooled per-graph embedding
    kl: Tensor             # scalar compression surrogate
    logits: Tensor         # (G, m)
    mu: Tensor
    logvar: Tensor
    node_weight: np.ndarray    # (N_base,) fusion mass per base node
    view_graph_embeddings: list[Tensor]  # per view (G, hidden) pooled encodings


def teacher_forward(views: ViewSet, model: TeacherModel,
                    rng: np.random.Generator | None = None,
                    train: bool = True,
                    dataset_name: str | None = None) -> TeacherOutput:
    """Fuse per-view encodings, sample the Gaussian head (training only),
    pool per graph, and classify."""
    if train and rng is None:
        raise ContractError("training-mode forward needs an rng for sampling")
    base = views.base
    n_base = base.num_nodes
    name = dataset_name or "default"
    if name not in model.adapters:
        raise ContractError(f"no input adapter for dataset {name!r}")
    theta = model.fusion_weights()   # (1, V)

    fused_num = None
    denom = None
    view_graph_embeddings = []
    for v, vb in enumerate(views.views):
        feats = model.adapters[name](Tensor(vb.features))
        enc = model.encoders[v](feats, vb.propagation_matrix())
        scattered = ad.scatter_rows(enc, vb.base_index, n_base)
        mask = np.zeros((n_base, 1))
        mask[vb.base_index] = 1.0
        theta_v = ad.take_cols(theta, np.array([v]))     # (1,1)
        term = ad.mul(scattered, theta_v)
        w_term = ad.mul(Tensor(mask), theta_v)
        fused_num = term if fused_num is None else ad.add(fused_num, term)
        denom = w_term if denom is None else ad.add(denom, w_term)
        view_graph_embeddings.append(ad.matmul(Tensor(vb.pooling_matrix()), enc))

    node_weight = denom.data.reshape(-1).copy()
    z_pre = ad.div(fused_num, ad.clip_min(denom, 1e-12))

    mu = model.mu_head(z_pre)
    logvar = model.logvar_head(z_pre)
    if train:
        eps = Tensor(rng.standard_normal(mu.data.shape))
        z_nodes = ad.add(mu, ad.mul(ad.exp(ad.mul(logvar, Tensor(np.array(0.5)))), eps))
    else:
        z_nodes = mu
    # compression is measured over nodes that survive in at least one view
    alive_idx = np.flatnonzero(node_weight > 0)
    kl = kl_compression(ad.gather_rows(mu, alive_idx),
                        ad.gather_rows(logvar, alive_idx))

    alive = (node_weight > 0).astype(np.float64)
    if model.pooling == "max":
        segments = [(int(base.offsets[g]), int(base.offsets[g + 1]))
                    for g in range(base.num_graphs)]
        z_graph = ad.segment_max(z_nodes, segments)
    else:
        pool = base.pooling_matrix(alive)
        if model.pooling == "sum":
            counts = np.maximum((pool > 0).sum(axis=1, keepdims=True), 1)
            pool = pool * counts
        z_graph = ad.matmul(Tensor(pool), z_nodes)
    logits = model.classifier(z_graph)
    return TeacherOutput(z_nodes, z_graph, kl, logits, mu, logvar,
                         node_weight, view_graph_embeddings)


def teacher_reconstruct(z_nodes: Tensor, model: TeacherModel, views: ViewSet,
                        dataset_name: str | None = None) -> Tensor:
    """Mean squared reconstruction error over surviving (node, view) pairs."""
    name = dataset_name or "default"
    decoders = model.decoders[name]
    total = None
    count = 0
    for v, vb in enumerate(views.views):
        z_v = ad.gather_rows(z_nodes, vb.base_index)
        pred = decoders[v](z_v)
        diff = ad.sub(pred, Tensor(vb.features))
        sq = ad.tsum(ad.mul(diff, diff))
        total = sq if total is None else ad.add(total, sq)
        count += vb.num_nodes
    return ad.div(total, Tensor(np.array(float(count))))


@dataclass
class StudentOutput:
    z_vs: Tensor
    z_vr: Tensor
    logits_vs: Tensor
    logits_vr: Tensor
    proj_vs: Tensor
    proj_vr: Tensor


def student_forward(z_graph: Tensor, model: StudentModel) -> StudentOutput:
    """Deterministic feed-forward into both subspaces and their heads."""
    if z_graph.data.shape[1] != model.hidden:
        raise ad.DimensionError("teacher embedding width mismatch")
    z_vs = model.vs_head(z_graph)
    z_vr = model.vr_head(z_graph)
    return StudentOutput(
        z_vs, z_vr,
        model.vs_classifier(z_vs), model.vr_classifier(z_vr),
        model.vs_projection(z_vs), model.vr_projection(z_vr),
    )


def project_teacher(z_graph: Tensor, model: StudentModel) -> Tensor:
    return model.teacher_projection(z_graph)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, teacher: TeacherModel, student: StudentModel,
                    fingerprint: str, meta: dict | None = None):
    arrays = {}
    for i, p in enumerate(teacher.params()):
        arrays[f"teacher_{i}"] = p.data
    for i, p in enumerate(student.params()):
        arrays[f"student_{i}"] = p.data
    arrays["fingerprint"] = np.frombuffer(fingerprint.encode(), dtype=np.uint8)
    arrays["meta"] = np.frombuffer(json.dumps(meta or {}).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


class CheckpointMismatchError(RuntimeError):
    """Checkpoint fingerprint disagrees with the active configuration."""


def load_checkpoint(path: str, teacher: TeacherModel, student: StudentModel,
                    expect_fingerprint: str) -> dict:
    """Load parameters in place; refuses on fingerprint mismatch."""
    with np.load(path) as blob:
        found = bytes(blob["fingerprint"]).decode()
        if found != expect_fingerprint:
            raise CheckpointMismatchError(
                f"checkpoint fingerprint {found} != expected {expect_fingerprint}")
        for i, p in enumerate(teacher.params()):
            p.data = blob[f"teacher_{i}"].copy()
        for i, p in enumerate(student.params()):
            p.data = blob[f"student_{i}"].copy()
        return json.loads(bytes(blob["meta"]).decode())
