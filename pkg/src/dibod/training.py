"""Loss assembly and the two-phase training schedule.

Pretraining jointly updates teacher, students, and critics on the source
corpus; adaptation freezes the teacher, derives the per-sample confidence
weights from its predictions on the target train split, and trains only
the students and critics.  Every batch logs each loss term so the total
is auditable as the sum of its parts.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .data import Dataset, FoldPlan, GraphBatch
from .hsic import KernelSpec, hsic
from .mi import (VariationalCritic, ba_log_terms, club_upper_bound,
                 conditional_club_view)
from .models import (StudentModel, TeacherModel, TeacherOutput, project_teacher,
                     student_forward, teacher_forward, teacher_reconstruct)
from .ssr import SsrState, compute_ssr
from .views import ViewSpec, make_view_set

ABLATIONS = ("none", "no-ib", "no-hsic", "no-ssr", "full-finetune")


class TrainingDivergedError(RuntimeError):
    """A loss term went non-finite; the message names the first offender."""


@dataclass(frozen=True)
class LossWeights:
    beta_t: float = 0.1
    beta_y: float = 0.05
    beta_vs: float = 0.05
    lambda_orth: float = 0.05
    lambda_ib: float = 0.01
    lambda_r: float = 0.001
    lambda_kd: float = 0.01
    tau: float = 0.5
    view_leak_weight: float = 0.0   # optional conditional view-leak regularizer
    align_term: bool = True         # the upper-bound tie between z_vs and the teacher

    def __post_init__(self):
        for name in ("beta_t", "beta_y", "beta_vs", "lambda_orth",
                     "lambda_ib", "lambda_r", "lambda_kd", "view_leak_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be strictly positive")


@dataclass(frozen=True)
class TrainPhase:
    phase: str                      # "pretrain" or "adapt"
    epochs: int = 100
    teacher_frozen: bool | None = None
    kappa_source: str | None = None  # "uniform" or "ssr"
    ablation: str = "none"
    ssr_refresh: bool = False       # recompute the regularizer every epoch

    def __post_init__(self):
        if self.phase not in ("pretrain", "adapt"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")
        if self.teacher_frozen is None:
            frozen = (self.phase == "adapt" and self.ablation != "full-finetune")
            object.__setattr__(self, "teacher_frozen", frozen)
        if self.kappa_source is None:
            src = ("ssr" if self.phase == "adapt" and self.ablation != "no-ssr"
                   else "uniform")
            object.__setattr__(self, "kappa_source", src)
        if self.phase == "adapt" and self.ablation == "none":
            if not self.teacher_frozen or self.kappa_source != "ssr":
                raise ValueError("un-ablated adaptation requires a frozen "
                                 "teacher and confidence-derived weights")


def apply_ablation(weights: LossWeights, flag: str) -> LossWeights:
    if flag == "no-ib":
        return replace(weights, beta_t=0.0, beta_vs=0.0)
    if flag == "no-hsic":
        return replace(weights, lambda_orth=0.0)
    return weights


# ---------------------------------------------------------------------------
# individual losses
# ---------------------------------------------------------------------------

def loss_ibt(z_graph: Tensor, labels: np.ndarray, kl: Tensor,
             critic: VariationalCritic, weights: LossWeights,
             view_leak: Tensor | None = None) -> Tensor:
    """Teacher objective: prediction floor down, compression up."""
    terms, h_y = ba_log_terms(z_graph, labels, critic)
    ba = ad.add(ad.tmean(terms), Tensor(np.array(h_y)))
    out = ad.add(-ba, ad.mul(kl, Tensor(np.array(weights.beta_t))))
    if view_leak is not None and weights.view_leak_weight > 0:
        out = ad.add(out, ad.mul(view_leak, Tensor(np.array(weights.view_leak_weight))))
    return out


def loss_ibs(z_vs: Tensor, z_vr: Tensor, z_graph: Tensor, labels: np.ndarray,
             kappa: np.ndarray, critics: dict[str, VariationalCritic],
             weights: LossWeights) -> Tensor:
    """Student objective: confidence-gated prediction on the invariant core,
    label suppression on the redundant part, cross-subspace compression,
    and an upper-bound tie to the teacher embedding."""
    kappa = np.asarray(kappa, dtype=np.float64).reshape(-1, 1)
    if kappa.shape[0] != z_vs.data.shape[0]:
        raise ContractError("kappa must align with the batch")
    terms, h_y = ba_log_terms(z_vs, labels, critics["vs_y"])
    gated = ad.tmean(ad.mul(terms, Tensor(kappa)))
    out = ad.sub(-gated, Tensor(np.array(h_y * float(kappa.mean()))))
    out = ad.add(out, ad.mul(club_upper_bound(z_vr, labels, critics["vr_y"]),
                             Tensor(np.array(weights.beta_y))))
    out = ad.add(out, ad.mul(club_upper_bound(z_vs, z_vr, critics["vs_vr"]),
                             Tensor(np.array(weights.beta_vs))))
    if weights.align_term:
        out = ad.add(out, club_upper_bound(z_vs, z_graph, critics["vs_zg"]))
    return out


def _normalize_rows(x: Tensor) -> Tensor:
    sq = ad.tsum(ad.mul(x, x), axis=1, keepdims=True)
    return ad.div(x, ad.sqrt(ad.clip_min(sq, 1e-24)))


def _info_nce(a: Tensor, b: Tensor, tau: float) -> Tensor:
    """Symmetric contrastive alignment: logits are negative squared
    distances between L2-normalized rows over temperature."""
    n = a.data.shape[0]
    if n < 2:
        raise ContractError("contrastive loss needs at least 2 samples")
    an = _normalize_rows(a)
    bn = _normalize_rows(b)
    sim = ad.matmul(an, ad.transpose(bn))
    logits = ad.mul(ad.sub(ad.mul(sim, Tensor(np.array(2.0))),
                           Tensor(np.array(2.0))), Tensor(np.array(1.0 / tau)))
    targets = np.arange(n)
    fwd = ad.softmax_cross_entropy(logits, targets)
    bwd = ad.softmax_cross_entropy(ad.transpose(logits), targets)
    return ad.mul(ad.add(fwd, bwd), Tensor(np.array(0.5)))


def loss_ckd(proj_vs: Tensor, proj_vr: Tensor, proj_teacher: Tensor,
             tau: float) -> Tensor:
    """Both students contrast against the teacher projection."""
    return ad.add(_info_nce(proj_vs, proj_teacher, tau),
                  _info_nce(proj_vr, proj_teacher, tau))


@dataclass
class TotalLoss:
    total: Tensor
    terms: dict[str, float]


def loss_total(teacher_out: TeacherOutput, student_out, recon: Tensor,
               labels: np.ndarray, kappa: np.ndarray,
               critics: dict[str, VariationalCritic], weights: LossWeights,
               phase: TrainPhase, proj_teacher: Tensor,
               kernel: KernelSpec | None = None,
               view_leak: Tensor | None = None) -> TotalLoss:
    task_logits = (teacher_out.logits if phase.phase == "pretrain"
                   else student_out.logits_vs)
    l_task = ad.softmax_cross_entropy(task_logits, labels)
    l_ibt = loss_ibt(teacher_out.z_graph, labels, teacher_out.kl, critics["t_y"],
                     weights, view_leak)
    l_ibs = loss_ibs(student_out.z_vs, student_out.z_vr, teacher_out.z_graph,
                     labels, kappa, critics, weights)
    l_ckd = loss_ckd(student_out.proj_vs, student_out.proj_vr, proj_teacher,
                     weights.tau)
    l_orth = hsic(student_out.z_vs, student_out.z_vr,
                  kernel or KernelSpec("rbf", "median"))
    l_kd = ad.add(l_ckd, ad.mul(l_orth, Tensor(np.array(weights.lambda_orth))))
    total = l_task
    total = ad.add(total, ad.mul(ad.add(l_ibt, l_ibs),
                                 Tensor(np.array(weights.lambda_ib))))
    total = ad.add(total, ad.mul(recon, Tensor(np.array(weights.lambda_r))))
    total = ad.add(total, ad.mul(l_kd, Tensor(np.array(weights.lambda_kd))))
    terms = {
        "loss_task": l_task.item(),
        "loss_ibt": l_ibt.item(),
        "loss_ibs": l_ibs.item(),
        "loss_r": recon.item(),
        "loss_ckd": l_ckd.item(),
        "loss_orth": l_orth.item(),
        "loss_kd": l_kd.item(),
        "loss_total": total.item(),
    }
    for name, value in terms.items():
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite term {name} = {value}")
    return TotalLoss(total, terms)


def composed_total(terms: dict[str, float], weights: LossWeights) -> float:
    """Re-derive the total from logged parts (the additivity oracle)."""
    return (terms["loss_task"]
            + weights.lambda_ib * (terms["loss_ibt"] + terms["loss_ibs"])
            + weights.lambda_r * terms["loss_r"]
            + weights.lambda_kd * (terms["loss_ckd"]
                                   + weights.lambda_orth * terms["loss_orth"]))


# ---------------------------------------------------------------------------
# train state: models + critics + their optimizers
# ---------------------------------------------------------------------------

DEFAULT_VIEW_SPECS = [ViewSpec("node-drop", 0.1, 0), ViewSpec("edge-perturb", 0.1, 1)]


@dataclass
class TrainState:
    teacher: TeacherModel
    student: StudentModel
    critics: dict[str, VariationalCritic]
    view_critics: dict[int, VariationalCritic]
    num_classes: int
    hidden: int

    @classmethod
    def build(cls, feature_dims: dict[str, int], num_classes: int,
              num_views: int, seed: int, adapter_width: int = 32,
              hidden: int = 64, proj_dim: int = 32, pooling: str = "mean",
              critic_lr: float = 1e-3, with_view_critics: bool = False
              ) -> "TrainState":
        rng = np.random.default_rng(np.random.SeedSequence(seed & 0xFFFFFFFF,
                                                           spawn_key=(11,)))
        teacher = TeacherModel(feature_dims, num_classes, num_views, rng,
                               adapter_width=adapter_width, hidden=hidden,
                               pooling=pooling)
        student = StudentModel(num_classes, rng, hidden=hidden, proj_dim=proj_dim)
        critics = {
            "t_y": VariationalCritic(hidden, num_classes, rng, "categorical", lr=critic_lr),
            "vs_y": VariationalCritic(hidden, num_classes, rng, "categorical", lr=critic_lr),
            "vr_y": VariationalCritic(hidden, num_classes, rng, "categorical", lr=critic_lr),
            "vs_vr": VariationalCritic(hidden, hidden, rng, "gaussian", lr=critic_lr),
            "vs_zg": VariationalCritic(hidden, hidden, rng, "gaussian", lr=critic_lr),
        }
        view_critics = {}
        if with_view_critics:
            view_critics = {c: VariationalCritic(hidden, num_views, rng,
                                                 "categorical", lr=critic_lr)
                            for c in range(num_classes)}
        return cls(teacher, student, critics, view_critics, num_classes, hidden)


@dataclass
class MetricsLog:
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("epoch", "split", "loss_total", "loss_task", "loss_ibt",
               "loss_ibs", "loss_r", "loss_ckd", "loss_orth", "accuracy",
               "I_zvs_x_proxy", "I_zvs_y", "I_zvr_y")

    def add(self, **row):
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(row.get(c)) for c in self.COLUMNS])
        return buf.getvalue()

    def save(self, path: str):
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_csv())


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# the phase runner
# ---------------------------------------------------------------------------

def _phase_rng(seed: int, fold: int, phase: str) -> np.random.Generator:
    tag = 0 if phase == "pretrain" else 1
    return np.random.default_rng(np.random.SeedSequence(
        seed & 0xFFFFFFFF, spawn_key=(fold, tag)))


def _epoch_seed(seed: int, fold: int, epoch: int, batch_idx: int) -> int:
    return ((seed & 0xFFFF) * 1_000_003 + fold * 65_537
            + epoch * 257 + batch_idx) & 0x7FFFFFFF


EVAL_CHUNK = 32  # evaluation batches are chunked; propagation cost is O(N^2)


def _eval_logits(ds: Dataset, indices: np.ndarray, state: TrainState,
                 view_specs: list[ViewSpec], dataset_name: str, head: str
                 ) -> np.ndarray:
    eval_specs = [replace(s, rate=0.0) for s in view_specs]
    chunks = []
    for lo in range(0, len(indices), EVAL_CHUNK):
        batch = GraphBatch.from_dataset(ds, indices[lo:lo + EVAL_CHUNK])
        vs = make_view_set(batch, eval_specs, epoch_seed=0)
        out = teacher_forward(vs, state.teacher, train=False,
                              dataset_name=dataset_name)
        if head == "teacher":
            chunks.append(out.logits.data)
        else:
            chunks.append(student_forward(out.z_graph, state.student).logits_vs.data)
    return np.concatenate(chunks, axis=0)


def evaluate(ds: Dataset, indices: np.ndarray, state: TrainState,
             phase: TrainPhase, view_specs: list[ViewSpec],
             dataset_name: str) -> float:
    """Accuracy of the phase's task head in evaluation mode."""
    if len(indices) == 0:
        return float("nan")
    head = "teacher" if phase.phase == "pretrain" else "student"
    logits = _eval_logits(ds, indices, state, view_specs, dataset_name, head)
    labels = ds.labels()[np.asarray(indices, dtype=np.intp)]
    return float((logits.argmax(axis=1) == labels).mean())


def teacher_confidences(ds: Dataset, indices: np.ndarray, state: TrainState,
                        view_specs: list[ViewSpec], dataset_name: str) -> np.ndarray:
    logits = _eval_logits(ds, indices, state, view_specs, dataset_name, "teacher")
    return ad.softmax_rows(Tensor(logits)).data


def _critic_steps(state: TrainState, teacher_out: TeacherOutput, student_out,
                  labels: np.ndarray, weights: LossWeights,
                  view_ids: np.ndarray | None):
    z_g = teacher_out.z_graph.data
    z_vs = student_out.z_vs.data
    z_vr = student_out.z_vr.data
    state.critics["t_y"].fit_step(z_g, labels)
    state.critics["vs_y"].fit_step(z_vs, labels)
    state.critics["vr_y"].fit_step(z_vr, labels)
    state.critics["vs_vr"].fit_step(z_vs, z_vr)
    if weights.align_term:
        state.critics["vs_zg"].fit_step(z_vs, z_g)
    if state.view_critics and view_ids is not None:
        per_view = np.concatenate([e.data for e in teacher_out.view_graph_embeddings])
        rep_labels = np.tile(labels, len(teacher_out.view_graph_embeddings))
        for c, critic in state.view_critics.items():
            sel = rep_labels == c
            if sel.sum() >= 2:
                critic.fit_step(per_view[sel], view_ids[sel])


def run_phase(ds: Dataset, fold_plan: FoldPlan, fold: int, phase: TrainPhase,
              weights: LossWeights, seed: int, state: TrainState,
              view_specs: list[ViewSpec] | None = None,
              dataset_name: str = "default", lr: float = 0.001,
              batch_size: int = 32, kernel: KernelSpec | None = None
              ) -> tuple[TrainState, MetricsLog]:
    """Train one phase on one fold; returns the state and per-epoch metrics."""
    view_specs = view_specs or DEFAULT_VIEW_SPECS
    weights = apply_ablation(weights, phase.ablation)
    rng = _phase_rng(seed, fold, phase.phase)
    train_idx = fold_plan.train_indices(fold)
    test_idx = fold_plan.test_indices(fold)

    main_params = list(state.student.params())
    if not phase.teacher_frozen:
        main_params = state.teacher.params() + main_params
    opt = ad.Adam(main_params, lr=lr)
    frozen_checksum = state.teacher.checksum() if phase.teacher_frozen else None

    ssr_state: SsrState | None = None
    kappa_all = np.ones(len(ds.graphs))
    if phase.kappa_source == "ssr":
        conf = teacher_confidences(ds, train_idx, state, view_specs, dataset_name)
        ssr_state = compute_ssr(conf, ds.labels()[train_idx], ds.num_classes)
        kappa_all = np.ones(len(ds.graphs))
        kappa_all[train_idx] = ssr_state.kappa

    log = MetricsLog()
    for epoch in range(phase.epochs):
        if phase.kappa_source == "ssr" and phase.ssr_refresh and epoch > 0:
            conf = teacher_confidences(ds, train_idx, state, view_specs, dataset_name)
            ssr_state = compute_ssr(conf, ds.labels()[train_idx], ds.num_classes)
            kappa_all[train_idx] = ssr_state.kappa

        order = train_idx[rng.permutation(len(train_idx))]
        epoch_terms: list[dict[str, float]] = []
        mi_rows = []
        for batch_idx in range(0, len(order), batch_size):
            indices = order[batch_idx:batch_idx + batch_size]
            if len(indices) < 2:
                continue
            batch = GraphBatch.from_dataset(ds, indices)
            vs = make_view_set(batch, view_specs,
                               _epoch_seed(seed, fold, epoch, batch_idx))
            with ad.Tape():
                t_out = teacher_forward(vs, state.teacher, rng=rng, train=True,
                                        dataset_name=dataset_name)
                s_out = student_forward(t_out.z_graph, state.student)
                proj_t = project_teacher(t_out.z_graph, state.student)
                recon = teacher_reconstruct(t_out.z_nodes, state.teacher, vs,
                                            dataset_name=dataset_name)
                view_leak = None
                if weights.view_leak_weight > 0 and state.view_critics:
                    per_view = ad.concat_rows(t_out.view_graph_embeddings)
                    n_views = len(t_out.view_graph_embeddings)
                    view_ids = np.repeat(np.arange(n_views), batch.num_graphs)
                    rep_labels = np.tile(batch.labels, n_views)
                    view_leak = conditional_club_view(per_view, view_ids,
                                                      rep_labels, state.view_critics)
                tl = loss_total(t_out, s_out, recon, batch.labels,
                                kappa_all[indices], state.critics, weights,
                                phase, proj_t, kernel, view_leak)
                view_ids_flat = None
                if state.view_critics:
                    view_ids_flat = np.repeat(np.arange(len(t_out.view_graph_embeddings)),
                                              batch.num_graphs)
                _critic_steps(state, t_out, s_out, batch.labels, weights,
                              view_ids_flat)
                opt.zero_grad()
                ad.backward(tl.total)
            for p in main_params:
                # heads outside this phase's loss composition get zero grads
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            opt.step()
            epoch_terms.append(tl.terms)
            mi_rows.append(_mi_estimates(state, t_out, s_out, batch.labels))

        means = {k: float(np.mean([t[k] for t in epoch_terms]))
                 for k in epoch_terms[0]} if epoch_terms else {}
        mi_means = {k: float(np.mean([r[k] for r in mi_rows]))
                    for k in mi_rows[0]} if mi_rows else {}
        train_acc = evaluate(ds, train_idx, state, phase, view_specs, dataset_name)
        test_acc = evaluate(ds, test_idx, state, phase, view_specs, dataset_name)
        log.add(epoch=epoch, split="train", accuracy=train_acc, **means, **mi_means)
        log.add(epoch=epoch, split="test", accuracy=test_acc)

    if phase.teacher_frozen and state.teacher.checksum() != frozen_checksum:
        raise ContractError("frozen teacher parameters changed during adaptation")
    return state, log


def _mi_estimates(state: TrainState, t_out: TeacherOutput, s_out,
                  labels: np.ndarray) -> dict[str, float]:
    """Per-batch logged estimates feeding the information-dynamics curves."""
    z_vs = Tensor(s_out.z_vs.data)
    z_vr = Tensor(s_out.z_vr.data)
    terms, h_y = ba_log_terms(z_vs, labels, state.critics["vs_y"])
    i_vs_y = float(terms.data.mean() + h_y)
    i_vr_y = club_upper_bound(z_vr, labels, state.critics["vr_y"]).item()
    return {"I_zvs_x_proxy": t_out.kl.item(), "I_zvs_y": i_vs_y,
            "I_zvr_y": i_vr_y}
