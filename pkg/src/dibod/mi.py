"""Variational mutual-information bounds.

A lower bound from a learned conditional decoder (empirical label entropy
plus mean conditional log-likelihood) and a contrastive log-ratio upper
bound from a fitted conditional model, in categorical and Gaussian
flavors, plus the Gaussian-head compression term and a class-stratified
variant of the upper bound for view-identity leakage.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .nn import Mlp

LOG_FLOOR = float(np.log(1e-12))
_LOG_2PI = float(np.log(2.0 * np.pi))


def label_entropy(y: np.ndarray) -> float:
    """Empirical entropy of integer labels, in nats."""
    counts = np.bincount(np.asarray(y, dtype=np.intp))
    freq = counts[counts > 0] / counts.sum()
    return float(-(freq * np.log(freq)).sum())


class VariationalCritic:
    """Conditional model q(y|z) with its own optimizer.

    kind "categorical": an MLP to class logits, rows softmax to valid
    distributions.  kind "gaussian": an MLP trunk with mean and
    log-variance heads over a continuous target.
    """

    def __init__(self, d_in: int, target: int, rng: np.random.Generator,
                 kind: str = "categorical", hidden: int = 64, lr: float = 1e-3):
        if kind not in ("categorical", "gaussian"):
            raise ValueError(f"unknown critic kind {kind!r}")
        self.kind = kind
        self.d_in = d_in
        self.target = target
        if kind == "categorical":
            self.net = Mlp([d_in, hidden, target], rng)
            self._params = self.net.params()
        else:
            self.trunk = Mlp([d_in, hidden], rng)
            self.mu_head = Mlp([hidden, target], rng)
            self.logvar_head = Mlp([hidden, target], rng)
            self._params = (self.trunk.params() + self.mu_head.params()
                            + self.logvar_head.params())
        self.opt = ad.Adam(self._params, lr=lr)

    def params(self) -> list[Tensor]:
        return self._params

    # -- categorical -------------------------------------------------------
    def logits(self, z: Tensor) -> Tensor:
        if self.kind != "categorical":
            raise ContractError("logits() needs a categorical critic")
        return self.net(z)

    def probabilities(self, z: Tensor) -> Tensor:
        return ad.softmax_rows(self.logits(z))

    # -- gaussian ----------------------------------------------------------
    def gaussian_params(self, z: Tensor) -> tuple[Tensor, Tensor]:
        if self.kind != "gaussian":
            raise ContractError("gaussian_params() needs a gaussian critic")
        h = ad.relu(self.trunk(z))
        return self.mu_head(h), self.logvar_head(h)

    # -- shared ------------------------------------------------------------
    def log_prob(self, z: Tensor, y) -> Tensor:
        """Per-sample log q(y_i|z_i) as an (n, 1) tensor, floored at ln 1e-12."""
        if self.kind == "categorical":
            logq = ad.log_softmax_rows(self.logits(z))
            return ad.clip_min(ad.take_cols(logq, np.asarray(y, dtype=np.intp)),
                               LOG_FLOOR)
        mu, logvar = self.gaussian_params(z)
        yt = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=np.float64))
        d = ad.sub(yt, mu)
        quad = ad.div(ad.mul(d, d), ad.exp(logvar))
        per_dim = ad.add(ad.add(quad, logvar), Tensor(np.array(_LOG_2PI)))
        return ad.clip_min(ad.mul(ad.tsum(per_dim, axis=1, keepdims=True),
                                  Tensor(np.array(-0.5))), LOG_FLOOR)

    def fit_step(self, z: np.ndarray, y) -> float:
        """One maximum-likelihood gradient step on detached inputs."""
        self.opt.zero_grad()
        with ad.Tape():
            nll = -ad.tmean(self.log_prob(Tensor(np.asarray(z)), y))
            ad.backward(nll)
        self.opt.step()
        return nll.item()

    def fit(self, z: np.ndarray, y, steps: int, batch: int = 256,
            rng: np.random.Generator | None = None) -> float:
        rng = rng or np.random.default_rng(0)
        n = z.shape[0]
        last = 0.0
        for _ in range(steps):
            idx = rng.integers(0, n, size=min(batch, n))
            yy = y[idx] if isinstance(y, np.ndarray) else y
            last = self.fit_step(z[idx], yy)
        return last


def ba_log_terms(z: Tensor, y: np.ndarray, critic: VariationalCritic
                 ) -> tuple[Tensor, float]:
    """Per-sample conditional log-likelihoods and the label entropy."""
    if critic.kind != "categorical":
        raise ContractError("the lower bound needs a categorical critic")
    y = np.asarray(y, dtype=np.intp)
    if z.data.shape[0] != y.shape[0] or y.shape[0] < 2:
        raise ContractError("need matched sample count >= 2")
    return critic.log_prob(z, y), label_entropy(y)


def ba_lower_bound(z: Tensor, y: np.ndarray, critic: VariationalCritic) -> Tensor:
    """H(Y) + mean log q(y|z): maximizing it raises a floor under I(Z;Y)."""
    terms, h_y = ba_log_terms(z, y, critic)
    return ad.add(ad.tmean(terms), Tensor(np.array(h_y)))


def club_upper_bound(z: Tensor, y, critic: VariationalCritic) -> Tensor:
    """mean log q(y_i|z_i) - mean_{i,j} log q(y_j|z_i).

    With a well-fitted conditional this sits above I(Z;Y); minimized
    w.r.t. the representation that produced z.
    """
    n = z.data.shape[0]
    if n < 2:
        raise ContractError("need at least 2 samples")
    positive = ad.tmean(critic.log_prob(z, y))
    if critic.kind == "categorical":
        yv = np.asarray(y, dtype=np.intp)
        if yv.shape[0] != n:
            raise ContractError("sample count mismatch")
        freq = np.bincount(yv, minlength=critic.target) / n
        logq = ad.clip_min(ad.log_softmax_rows(critic.logits(z)), LOG_FLOOR)
        negative = ad.tmean(ad.matmul(logq, Tensor(freq.reshape(-1, 1))))
    else:
        yt = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=np.float64))
        if yt.data.shape[0] != n:
            raise ContractError("sample count mismatch")
        mu, logvar = critic.gaussian_params(z)
        # sum_j (y_jd - mu_id)^2 = n mu_id^2 - 2 mu_id S_d + Q_d
        s = ad.tmean(yt, axis=0, keepdims=True)
        q = ad.tmean(ad.mul(yt, yt), axis=0, keepdims=True)
        sq = ad.add(ad.sub(ad.mul(mu, mu), ad.mul(ad.mul(mu, s), Tensor(np.array(2.0)))), q)
        per_dim = ad.add(ad.add(ad.div(sq, ad.exp(logvar)), logvar),
                         Tensor(np.array(_LOG_2PI)))
        rows = ad.clip_min(ad.mul(ad.tsum(per_dim, axis=1, keepdims=True),
                                  Tensor(np.array(-0.5))), LOG_FLOOR)
        negative = ad.tmean(rows)
    return ad.sub(positive, negative)


def kl_compression(mu: Tensor, logvar: Tensor) -> Tensor:
    """Mean over samples of KL(N(mu, exp(logvar)) || N(0, I))."""
    if mu.data.shape != logvar.data.shape:
        raise ContractError("mu/logvar shape mismatch")
    inner = ad.sub(ad.sub(ad.add(ad.exp(logvar), ad.mul(mu, mu)),
                          Tensor(np.ones_like(mu.data))), logvar)
    return ad.mul(ad.tmean(ad.tsum(inner, axis=1)), Tensor(np.array(0.5)))


def conditional_club_view(z: Tensor, view_ids: np.ndarray, y: np.ndarray,
                          critics: dict[int, VariationalCritic]) -> Tensor:
    """Class-stratified upper bound on view-identity leakage.

    Average over classes with >= 2 samples of the upper bound restricted
    to that class, predicting the view id from z.
    """
    y = np.asarray(y, dtype=np.intp)
    view_ids = np.asarray(view_ids, dtype=np.intp)
    present = [c for c in np.unique(y) if (y == c).sum() >= 2]
    if not present:
        raise ContractError("no class has 2 samples")
    total = None
    for c in present:
        if c not in critics:
            raise ContractError(f"no critic for class {c}")
        sel = np.flatnonzero(y == c)
        term = club_upper_bound(ad.gather_rows(z, sel), view_ids[sel], critics[c])
        total = term if total is None else ad.add(total, term)
    return ad.div(total, Tensor(np.array(float(len(present)))))
