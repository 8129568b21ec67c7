"""Binary quadratic-kernel SVM trained with sequential minimal optimisation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from numba import njit

from .core import DomainError
from .features import FeatureId

logger = logging.getLogger(__name__)

MODEL_FORMAT = "wearauth.svm-model"
MODEL_VERSION = 1
GENUINE, IMPOSTOR = 1, -1

_TAU = 1e-12


def quadratic_kernel(u: Sequence[float], v: Sequence[float]) -> float:
    """K(u, v) = (1 + u.v)^2."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DomainError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float((1.0 + u @ v) ** 2)


def gram(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (1.0 + a @ b.T) ** 2


@dataclass(frozen=True, eq=False)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "Scaler":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DomainError(f"expected {self.dim} features, got {x.shape[-1]}")
        return (x - self.mean) / self.std


def fit_scaler(train: np.ndarray) -> Scaler:
    """Per-feature z-scoring from training data; zero spread maps to std 1."""
    train = np.asarray(train, dtype=float)
    if train.ndim != 2 or len(train) < 2:
        raise DomainError("fit_scaler needs at least two training vectors")
    std = train.std(axis=0, ddof=1)
    std[std == 0] = 1.0
    return Scaler(train.mean(axis=0), std)


def apply_scaler(scaler: Scaler, v: np.ndarray) -> np.ndarray:
    return scaler.transform(v)


@dataclass(frozen=True)
class TrainConfig:
    """SMO settings.

    ``max_passes`` bounds stalled progress: training stops once
    ``max_passes * n`` consecutive pair updates each move an alpha by less
    than 1e-8.  ``seed`` is kept for provenance; pair selection is
    deterministic (maximal-gain working set) and draws no random numbers.
    """

    C: float = 1.0
    kkt_tol: float = 1e-3
    max_passes: int = 10
    seed: int = 0
    max_iter: Optional[int] = None

    def __post_init__(self):
        if self.C <= 0:
            raise DomainError("C must be positive")
        if self.kkt_tol <= 0:
            raise DomainError("kkt_tol must be positive")
        if self.max_passes < 1:
            raise DomainError("max_passes must be positive")


@dataclass(frozen=True, eq=False)
class SvmModel:
    subject: Optional[str]
    scaler: Scaler
    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    feature_ids: tuple[FeatureId, ...] = ()
    provenance: dict[str, Any] = field(default_factory=dict)
    C: float = 1.0

    @property
    def alphas(self) -> np.ndarray:
        return np.abs(self.dual_coefs)

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        z = self.scaler.transform(np.atleast_2d(x))
        return gram(z, self.support_vectors) @ self.dual_coefs + self.bias

    def to_json(self) -> str:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "subject": self.subject,
            "provenance": self.provenance,
            "feature_ids": [str(f) for f in self.feature_ids],
            "C": self.C,
            "scaler": {"mean": self.scaler.mean.tolist(), "std": self.scaler.std.tolist()},
            "bias": self.bias,
            "dual_coefs": self.dual_coefs.tolist(),
            "support_vectors": self.support_vectors.tolist(),
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SvmModel":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT:
            raise DomainError("not a model file")
        if doc.get("version") != MODEL_VERSION:
            raise DomainError(f"unsupported model version {doc.get('version')}")
        dim = len(doc["scaler"]["mean"])
        return cls(
            subject=doc["subject"],
            scaler=Scaler(np.array(doc["scaler"]["mean"], dtype=float),
                          np.array(doc["scaler"]["std"], dtype=float)),
            support_vectors=np.array(doc["support_vectors"], dtype=float).reshape(-1, dim),
            dual_coefs=np.array(doc["dual_coefs"], dtype=float),
            bias=float(doc["bias"]),
            feature_ids=tuple(FeatureId.parse(f) for f in doc["feature_ids"]),
            provenance=doc["provenance"],
            C=float(doc["C"]),
        )


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


@njit(cache=True)
def _smo_loop(K, y, C, tol, max_iter, stall_limit):
    """Pair updates with second-order working-set selection.

    Returns (alpha, grad, iterations, status); status 0 = converged,
    1 = stalled, 2 = iteration limit.  grad is the gradient of
    0.5 a'Qa - e'a with Q = yy'K.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    stalled = 0
    for it in range(max_iter):
        i = -1
        m_val = -np.inf
        M_val = np.inf
        for t in range(n):
            v = -y[t] * grad[t]
            if y[t] > 0:
                up, low = alpha[t] < C, alpha[t] > 0
            else:
                up, low = alpha[t] > 0, alpha[t] < C
            if up and v > m_val:
                m_val = v
                i = t
            if low and v < M_val:
                M_val = v
        if m_val - M_val <= tol:
            return alpha, grad, it, 0

        j = -1
        best = np.inf
        for t in range(n):
            if y[t] > 0:
                low = alpha[t] > 0
            else:
                low = alpha[t] < C
            if not low:
                continue
            b = m_val + y[t] * grad[t]
            if b <= 0:
                continue
            a = K[i, i] + K[t, t] - 2.0 * K[i, t]
            if a <= 0:
                a = _TAU
            g = -(b * b) / a
            if g < best:
                best = g
                j = t

        yi, yj = y[i], y[j]
        ai, aj = alpha[i], alpha[j]
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta < _TAU:
            eta = _TAU
        # errors without bias: E_k = y_k * grad_k
        e_i, e_j = yi * grad[i], yj * grad[j]
        if yi != yj:
            lo, hi = max(0.0, aj - ai), min(C, C + aj - ai)
        else:
            lo, hi = max(0.0, ai + aj - C), min(C, ai + aj)
        aj_new = min(hi, max(lo, aj + yj * (e_i - e_j) / eta))
        ai_new = min(C, max(0.0, ai + yi * yj * (aj - aj_new)))
        # snap to the box so bound membership is exact
        if ai_new < 1e-12 * C:
            ai_new = 0.0
        elif C - ai_new < 1e-12 * C:
            ai_new = C
        if aj_new < 1e-12 * C:
            aj_new = 0.0
        elif C - aj_new < 1e-12 * C:
            aj_new = C

        d_i, d_j = ai_new - ai, aj_new - aj
        alpha[i], alpha[j] = ai_new, aj_new
        ci, cj = yi * d_i, yj * d_j
        for t in range(n):
            grad[t] += y[t] * (K[t, i] * ci + K[t, j] * cj)

        if max(abs(d_i), abs(d_j)) < 1e-8:
            stalled += 1
            if stalled >= stall_limit:
                return alpha, grad, it, 1
        else:
            stalled = 0
    return alpha, grad, max_iter, 2


def _solve(K: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> tuple[np.ndarray, float]:
    """Solve the dual; returns alphas and the bias.

    Stops once the maximal KKT violation m - M is at most ``kkt_tol``.  The
    bias is then placed inside [M, m], which keeps every training point's
    margin condition within ``kkt_tol``.
    """
    n = len(y)
    C = cfg.C
    max_iter = cfg.max_iter or max(1_000_000, 2000 * n)
    alpha, grad, iters, status = _smo_loop(
        np.ascontiguousarray(K), y, C, cfg.kkt_tol, max_iter, cfg.max_passes * n
    )
    if status == 1:
        logger.warning("SMO stalled after %d iterations", iters)
    elif status == 2:
        logger.warning("SMO hit the iteration limit %d", max_iter)

    v = -y * grad
    pos = y > 0
    free = (alpha > 0) & (alpha < C)
    if free.any():
        bias = float(v[free].mean())
    else:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        bias = float((v[up].max() + v[low].min()) / 2)
    return alpha, bias


def smo_train(
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    scaler: Optional[Scaler] = None,
    *,
    subject: Optional[str] = None,
    feature_ids: Sequence[FeatureId] = (),
    provenance: Optional[dict[str, Any]] = None,
) -> SvmModel:
    """Train a q-svm on ``X`` (labels +1 genuine / -1 impostor).

    ``scaler`` is applied before the kernel; without one the raw features are
    used, so callers standardise by passing ``fit_scaler(X)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise DomainError("X must be (n, d) with one label per row")
    if len(X) < 2:
        raise DomainError("need at least two training points")
    if not np.isfinite(X).all():
        raise DomainError("non-finite feature value")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise DomainError("labels must be +1 or -1")
    if len(np.unique(y)) < 2:
        raise DomainError("training data must contain both classes")
    if feature_ids and len(feature_ids) != X.shape[1]:
        raise DomainError("feature_ids length does not match the vector dimension")
    scaler = scaler or Scaler.identity(X.shape[1])
    Z = scaler.transform(X)
    K = gram(Z, Z)
    alpha, bias = _solve(K, y, cfg)
    sv = alpha > 0
    return SvmModel(
        subject=subject,
        scaler=scaler,
        support_vectors=Z[sv],
        dual_coefs=alpha[sv] * y[sv],
        bias=bias,
        feature_ids=tuple(feature_ids),
        provenance=dict(provenance or {}),
        C=cfg.C,
    )


def decision(model: SvmModel, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DomainError("decision takes a single vector")
    return float(model.decision_function(v)[0])


def predict(model: SvmModel, v: np.ndarray) -> str:
    return "genuine" if decision(model, v) >= 0 else "impostor"


def predict_labels(model: SvmModel, X: np.ndarray) -> np.ndarray:
    """Vectorised prediction: +1 genuine, -1 impostor."""
    return np.where(model.decision_function(X) >= 0, GENUINE, IMPOSTOR)
