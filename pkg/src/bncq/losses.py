"""Generative, large-margin, hybrid and cross-entropy losses.

The BNC losses work on a matrix of class log-joints ``(N, C)`` and return the
mean loss together with its gradient with respect to that matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BncModel, log_joint, logsumexp


@dataclass(frozen=True)
class HybridConfig:
    lambda_hyb: float = 0.0
    gamma_hyb: float = 1.0
    eta_hyb: float = 10.0

    def __post_init__(self):
        if not (np.isfinite(self.lambda_hyb) and self.lambda_hyb >= 0):
            raise ValueError("lambda_hyb must be finite and >= 0")
        if not (np.isfinite(self.gamma_hyb) and self.gamma_hyb > 0):
            raise ValueError("gamma_hyb must be finite and > 0")
        if not (np.isfinite(self.eta_hyb) and self.eta_hyb > 0):
            raise ValueError("eta_hyb must be finite and > 0")


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def nll_from_joint(joint: np.ndarray, labels) -> tuple[float, np.ndarray]:
    n = len(joint)
    rows = np.arange(n)
    grad = np.zeros_like(joint)
    grad[rows, labels] = -1.0 / n
    return float(-joint[rows, labels].mean()), grad


def log_margins(joint: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    """m_n = log p(x_n, c_n) - logsumexp over competing classes, and dm/djoint."""
    n, c = joint.shape
    rows = np.arange(n)
    others = joint.copy()
    others[rows, labels] = -np.inf
    lse = logsumexp(others, axis=1)
    m = joint[rows, labels] - lse
    dm = -np.exp(others - lse[:, None])
    dm[rows, labels] = 1.0
    return m, dm


def margin_from_joint(joint: np.ndarray, labels, gamma: float, eta: float) -> tuple[float, np.ndarray]:
    """Smoothed hinge ``softplus(eta * (gamma - m)) / eta`` averaged over the batch."""
    n = len(joint)
    m, dm = log_margins(joint, labels)
    z = eta * (gamma - m)
    loss = _softplus(z) / eta
    dloss_dm = -_sigmoid(z)
    return float(loss.mean()), dm * (dloss_dm / n)[:, None]


def hybrid_from_joint(joint: np.ndarray, labels, cfg: HybridConfig) -> tuple[float, np.ndarray]:
    loss, grad = nll_from_joint(joint, labels)
    if cfg.lambda_hyb > 0:
        lm, glm = margin_from_joint(joint, labels, cfg.gamma_hyb, cfg.eta_hyb)
        loss += cfg.lambda_hyb * lm
        grad += cfg.lambda_hyb * glm
    return loss, grad


def nll_loss(model: BncModel, samples, labels) -> float:
    return nll_from_joint(log_joint(model, samples), labels)[0]


def margin_loss(model: BncModel, samples, labels, gamma: float, eta: float) -> float:
    return margin_from_joint(log_joint(model, samples), labels, gamma, eta)[0]


def hybrid_loss(model: BncModel, samples, labels, cfg: HybridConfig) -> float:
    return hybrid_from_joint(log_joint(model, samples), labels, cfg)[0]


def cross_entropy_loss(probs, labels) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    with np.errstate(divide="ignore"):
        return float(-np.log(probs[np.arange(len(labels)), labels]).mean())


def cross_entropy_from_logits(logits: np.ndarray, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy of softmax(logits); returns (loss, probs, dloss/dlogits)."""
    n = len(logits)
    rows = np.arange(n)
    logp = logits - logsumexp(logits, axis=1, keepdims=True)
    probs = np.exp(logp)
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return float(-logp[rows, labels].mean()), probs, grad / n
