"""Exact discrete-probability oracles.

Joint tables over named finite axes, exact mutual information with the
0*log0 = 0 convention, and the constructions used to probe when the fused
representation's predictive information survives conditioning on the view
source, when it decomposes across views, and when empirical confidence
thresholds match their closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_CARDINALITY = 16


class TableValidationError(ValueError):
    """Joint table is not a probability distribution."""


@dataclass
class JointTable:
    axes: list[str]
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != len(self.axes):
            raise TableValidationError("axis count does not match table rank")
        if any(c > MAX_CARDINALITY for c in self.probs.shape):
            raise TableValidationError(f"cardinality above {MAX_CARDINALITY}")
        if np.any(self.probs < 0):
            raise TableValidationError("negative probability mass")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-12:
            raise TableValidationError(f"total mass {total} != 1")

    def axis(self, name: str) -> int:
        try:
            return self.axes.index(name)
        except ValueError:
            raise KeyError(f"no axis named {name!r}") from None

    def marginal(self, names: list[str]) -> np.ndarray:
        """Sum out all other axes; result keeps the table's own axis order."""
        keep = {self.axis(n) for n in names}
        drop = tuple(i for i in range(self.probs.ndim) if i not in keep)
        return self.probs.sum(axis=drop) if drop else self.probs


def _plogp(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz])
    return out


def entropy(p: np.ndarray) -> float:
    return float(-_plogp(np.asarray(p, dtype=np.float64)).sum())


def mi(table: JointTable, a: str, b: str) -> float:
    """Exact I(A;B) in nats: sum p log(p / (p_a p_b))."""
    if a == b:
        raise ValueError("mi needs distinct axes")
    p_ab = table.marginal([a, b])
    if table.axis(a) > table.axis(b):
        p_ab = p_ab.T
    p_a = p_ab.sum(axis=1, keepdims=True)
    p_b = p_ab.sum(axis=0, keepdims=True)
    nz = p_ab > 0
    val = float((p_ab[nz] * (np.log(p_ab[nz]) - np.log((p_a * p_b)[nz]))).sum())
    return val


def conditional_mi(table: JointTable, a: str, b: str, given: str) -> float:
    """Exact I(A;B|C) = sum_c p(c) I(A;B | C=c)."""
    if len({a, b, given}) != 3:
        raise ValueError("conditional_mi needs three distinct axes")
    ia, ib, ic = table.axis(a), table.axis(b), table.axis(given)
    drop = tuple(i for i in range(table.probs.ndim) if i not in (ia, ib, ic))
    p3 = table.probs.sum(axis=drop) if drop else table.probs
    # reorder to (a, b, c)
    ranks = {ax: r for r, ax in enumerate(sorted([ia, ib, ic]))}
    p3 = np.transpose(p3, axes=(ranks[ia], ranks[ib], ranks[ic]))
    total = 0.0
    for c in range(p3.shape[2]):
        slab = p3[:, :, c]
        pc = float(slab.sum())
        if pc <= 0:
            continue
        cond = slab / pc
        sub = JointTable(["a", "b"], cond)
        total += pc * mi(sub, "a", "b")
    return total


# ---------------------------------------------------------------------------
# constructed tables for the redundancy-equivalence check
# ---------------------------------------------------------------------------

def make_table_z_y_phi(p_phi: np.ndarray, p_y_given_phi: np.ndarray,
                       p_z_given_y_phi: np.ndarray) -> JointTable:
    """Assemble p(z,y,phi) = p(phi) p(y|phi) p(z|y,phi); axes Z, Y, PHI."""
    n_phi = p_phi.shape[0]
    n_y = p_y_given_phi.shape[0]
    n_z = p_z_given_y_phi.shape[0]
    probs = np.zeros((n_z, n_y, n_phi))
    for f in range(n_phi):
        for y in range(n_y):
            probs[:, y, f] = p_phi[f] * p_y_given_phi[y, f] * p_z_given_y_phi[:, y, f]
    return JointTable(["Z", "Y", "PHI"], probs)


def redundancy_table_satisfying(seed: int = 0, n_z: int = 4, n_y: int = 3,
                                n_phi: int = 3) -> JointTable:
    """Y independent of PHI and Z independent of PHI given Y, by construction."""
    rng = np.random.default_rng(seed)
    p_phi = rng.dirichlet(np.ones(n_phi))
    p_y = rng.dirichlet(np.ones(n_y))
    p_z_given_y = rng.dirichlet(np.ones(n_z), size=n_y).T  # (n_z, n_y)
    p_y_given_phi = np.repeat(p_y[:, None], n_phi, axis=1)
    p_z_given_y_phi = np.repeat(p_z_given_y[:, :, None], n_phi, axis=2)
    return make_table_z_y_phi(p_phi, p_y_given_phi, p_z_given_y_phi)


def redundancy_table_violating(seed: int = 0) -> JointTable:
    """Y correlated with the view source, so the equivalence must break."""
    rng = np.random.default_rng(seed)
    n_z, n_y, n_phi = 3, 2, 2
    p_phi = np.array([0.5, 0.5])
    # strongly view-dependent label distribution
    p_y_given_phi = np.array([[0.9, 0.2], [0.1, 0.8]])
    p_z_given_y = rng.dirichlet(np.ones(n_z) * 0.4, size=n_y).T
    p_z_given_y_phi = np.repeat(p_z_given_y[:, :, None], n_phi, axis=2)
    return make_table_z_y_phi(p_phi, p_y_given_phi, p_z_given_y_phi)


def redundancy_table_deterministic() -> JointTable:
    """Z = Y uniform binary, PHI uniform and independent of both."""
    probs = np.zeros((2, 2, 2))
    for y in range(2):
        for f in range(2):
            probs[y, y, f] = 0.25
    return JointTable(["Z", "Y", "PHI"], probs)


def check_redundancy_equivalence(table: JointTable) -> dict:
    """Both independence conditions and the unconditional/conditional MI gap."""
    i_y_phi = mi(table, "Y", "PHI")
    i_z_phi_given_y = conditional_mi(table, "Z", "PHI", "Y")
    i_zy = mi(table, "Z", "Y")
    i_zy_given_phi = conditional_mi(table, "Z", "Y", "PHI")
    gap = abs(i_zy - i_zy_given_phi)
    holds = i_y_phi < 1e-12 and i_z_phi_given_y < 1e-12 and gap < 1e-12
    return {
        "check": "redundancy_equivalence",
        "I_Y_PHI": i_y_phi,
        "I_Z_PHI_given_Y": i_z_phi_given_y,
        "I_Z_Y": i_zy,
        "I_Z_Y_given_PHI": i_zy_given_phi,
        "gap": gap,
        "verdict": "equivalence holds" if holds else "equivalence does not hold",
        "passed": holds,
    }


# ---------------------------------------------------------------------------
# per-view decomposition of conditional information
# ---------------------------------------------------------------------------

def view_decomposition_table(seed: int = 0, symmetric: bool = True,
                             n_z: int = 3, n_y: int = 2, n_phi: int = 3,
                             p_phi: np.ndarray | None = None) -> JointTable:
    """Table whose per-view channels are identical (symmetric) or perturbed."""
    rng = np.random.default_rng(seed)
    if p_phi is None:
        p_phi = np.full(n_phi, 1.0 / n_phi)
    p_y = rng.dirichlet(np.ones(n_y))
    p_y_given_phi = np.repeat(p_y[:, None], n_phi, axis=1)
    base = rng.dirichlet(np.ones(n_z), size=n_y).T
    p_z = np.zeros((n_z, n_y, n_phi))
    for f in range(n_phi):
        if symmetric:
            p_z[:, :, f] = base
        else:
            jitter = rng.dirichlet(np.ones(n_z), size=n_y).T
            w = 0.2 + 0.6 * f / max(n_phi - 1, 1)
            p_z[:, :, f] = (1 - w) * base + w * jitter
    return make_table_z_y_phi(np.asarray(p_phi, dtype=np.float64), p_y_given_phi, p_z)


def check_view_decomposition(table: JointTable, theta: np.ndarray) -> dict:
    """I(Z;Y|PHI) against the theta-weighted sum of per-view informations.

    The two sides agree exactly when theta equals the view probabilities;
    the report quantifies the gap otherwise rather than assuming it.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.shape[0] != table.probs.shape[table.axis("PHI")]:
        raise ValueError("theta length must match the view axis")
    if np.any(theta < 0) or abs(theta.sum() - 1.0) > 1e-9:
        raise ValueError("theta must be a distribution over views")
    lhs = conditional_mi(table, "Z", "Y", "PHI")
    iphi = table.axis("PHI")
    p_phi = table.marginal(["PHI"])
    per_view = []
    for f in range(table.probs.shape[iphi]):
        slab = np.take(table.probs, f, axis=iphi)
        pf = float(slab.sum())
        if pf <= 0:
            per_view.append(0.0)
            continue
        axes = [a for a in table.axes if a != "PHI"]
        sub = JointTable(axes, slab / pf)
        per_view.append(mi(sub, "Z", "Y"))
    rhs = float(np.dot(theta, per_view))
    gap = abs(lhs - rhs)
    return {
        "check": "view_decomposition",
        "conditional_information": lhs,
        "weighted_sum": rhs,
        "per_view": per_view,
        "theta": theta.tolist(),
        "view_probabilities": p_phi.tolist(),
        "gap": gap,
        "passed": gap < 1e-12,
    }


# ---------------------------------------------------------------------------
# confidence-threshold consistency on an ideal-predictor population
# ---------------------------------------------------------------------------

@dataclass
class IdealPopulation:
    """Samples from a predictor whose reported confidences are true posteriors.

    Classes are grouped into blocks; within a block the posterior is a fixed
    vector supported on that block, and both the prediction and the true
    label are independent draws from it.  Cross-block confusion is zero, so
    the empirical confusion channel leaves every block posterior invariant.
    """

    confidences: np.ndarray  # (n, m) reported class probabilities
    y_pred: np.ndarray       # (n,) argmax-free sampled predictions
    y_true: np.ndarray       # (n,)
    num_classes: int


def two_block_posteriors(num_classes: int = 4) -> list[np.ndarray]:
    if num_classes < 2 or num_classes % 2:
        raise ValueError("two_block_posteriors needs an even class count >= 2")
    half = num_classes // 2
    a = np.zeros(num_classes)
    b = np.zeros(num_classes)
    a[:half] = np.linspace(0.7, 0.3, half) if half > 1 else [1.0]
    a[:half] /= a[:half].sum()
    b[half:] = np.linspace(0.4, 0.6, half) if half > 1 else [1.0]
    b[half:] /= b[half:].sum()
    return [a, b]


def generate_ideal_population(n: int, seed: int,
                              posteriors: list[np.ndarray] | None = None,
                              weights: np.ndarray | None = None) -> IdealPopulation:
    if posteriors is None:
        posteriors = two_block_posteriors()
    m = posteriors[0].shape[0]
    k = len(posteriors)
    if weights is None:
        weights = np.full(k, 1.0 / k)
    rng = np.random.default_rng(seed)
    which = rng.choice(k, size=n, p=weights)
    conf = np.stack([posteriors[w] for w in which])
    cum = conf.cumsum(axis=1)
    cum[:, -1] = 1.0
    # prediction and truth are independent categorical draws from the posterior
    y_pred = (rng.random((n, 1)) < cum).argmax(axis=1)
    y_true = (rng.random((n, 1)) < cum).argmax(axis=1)
    return IdealPopulation(conf, y_pred, y_true, m)


def threshold_consistency_report(pop: IdealPopulation) -> dict:
    """Three routes to the per-class confidence threshold and their gaps.

    empirical: mean predicted-class confidence over each predicted class;
    double_sum: channel(pred|true) x posterior(true|pred) from counts;
    expectation: channel-smoothed true-class confidences averaged per class.
    """
    m = pop.num_classes
    n = pop.y_pred.shape[0]
    conf, yp, yt = pop.confidences, pop.y_pred, pop.y_true
    pred_counts = np.bincount(yp, minlength=m).astype(np.float64)
    true_counts = np.bincount(yt, minlength=m).astype(np.float64)
    joint = np.zeros((m, m))
    np.add.at(joint, (yp, yt), 1.0)

    t_emp = np.ones(m)
    t_double = np.ones(m)
    t_expect = np.ones(m)
    for c in range(m):
        sel = yp == c
        if pred_counts[c] > 0:
            t_emp[c] = conf[sel, c].mean()
        # channel p(pred=c | true=k) and posterior p(true=k | pred=c) from counts
        chan = np.divide(joint[c], true_counts, out=np.zeros(m), where=true_counts > 0)
        post = joint[c] / pred_counts[c] if pred_counts[c] > 0 else np.zeros(m)
        t_double[c] = float(np.dot(chan, post))
        if pred_counts[c] > 0:
            t_expect[c] = float(np.mean(conf[sel] @ chan))
    gap_emp_double = np.abs(t_emp - t_double)
    gap_double_expect = np.abs(t_double - t_expect)
    return {
        "check": "threshold_consistency",
        "n": n,
        "t_empirical": t_emp.tolist(),
        "t_double_sum": t_double.tolist(),
        "t_expectation": t_expect.tolist(),
        "gap_empirical_vs_double_sum": gap_emp_double.tolist(),
        "gap_double_sum_vs_expectation": gap_double_expect.tolist(),
        "max_gap": float(max(gap_emp_double.max(), gap_double_expect.max())),
        "passed": bool(max(gap_emp_double.max(), gap_double_expect.max()) < 0.02),
    }


def check_threshold_consistency(n: int = 50_000, seed: int = 0,
                                small_n: int = 500) -> dict:
    """Full consistency check: gaps small at n and shrinking from small_n."""
    big = threshold_consistency_report(generate_ideal_population(n, seed))
    small = threshold_consistency_report(generate_ideal_population(small_n, seed + 1))
    shrinks = big["max_gap"] < small["max_gap"]
    return {
        "check": "threshold_consistency_trend",
        "large": big,
        "small": small,
        "gap_shrinks": bool(shrinks),
        "passed": bool(big["passed"] and shrinks),
    }


def run_all_checks() -> list[dict]:
    """The fixed battery behind the oracle-check command."""
    reports = []
    sat = check_redundancy_equivalence(redundancy_table_satisfying(seed=1))
    reports.append(sat)
    vio = check_redundancy_equivalence(redundancy_table_violating(seed=2))
    vio["check"] = "redundancy_equivalence_violation"
    vio["passed"] = (not vio.pop("passed")) and vio["gap"] > 1e-3
    vio["verdict"] = "counterexample behaves as expected" if vio["passed"] else "violation not detected"
    reports.append(vio)
    det = check_redundancy_equivalence(redundancy_table_deterministic())
    det["check"] = "redundancy_equivalence_deterministic"
    reports.append(det)
    table = view_decomposition_table(seed=3, symmetric=True)
    p_phi = table.marginal(["PHI"])
    reports.append(check_view_decomposition(table, p_phi))
    mismatch = check_view_decomposition(
        view_decomposition_table(seed=4, symmetric=False,
                                 p_phi=np.array([0.5, 0.3, 0.2])),
        np.array([0.2, 0.3, 0.5]))
    mismatch["check"] = "view_decomposition_mismatched_weights"
    mismatch["passed"] = mismatch["gap"] > 1e-6
    reports.append(mismatch)
    reports.append(check_threshold_consistency())
    return reports
