"""Linear probes on frozen embeddings and their metric reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax

RIDGE_ALPHAS = (0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0)
LOGISTIC_L2 = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
REGRESSION_METRICS = ("rmse", "mae", "r2", "mape")
CLASSIFICATION_METRICS = ("macro_f1", "weighted_f1", "accuracy")


class ProbeError(ValueError):
    pass


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split_indices(n: int, seed: int) -> Split:
    """Random 50/25/25 partition of ``range(n)``."""
    if n < 10:
        raise ProbeError(f"need at least 10 samples, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    a, b = n // 2, n // 2 + n // 4
    return Split(perm[:a], perm[a:b], perm[b:])


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        sd = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(sd > 1e-12, sd, 1.0))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale


@dataclass(frozen=True)
class ProbeModel:
    kind: str  # "ridge" or "logistic"
    weights: np.ndarray  # (features, outputs)
    bias: np.ndarray
    alpha: float
    scaler: Standardizer
    classes: tuple = ()

    def decision(self, x: np.ndarray) -> np.ndarray:
        return self.scaler(np.asarray(x, dtype=np.float64)) @ self.weights + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = self.decision(x)
        if self.kind == "ridge":
            return out[:, 0]
        return np.asarray(self.classes, dtype=object)[np.argmax(out, axis=1)]


# ---------------------------------------------------------------- regression


def ridge_solve(x: np.ndarray, y: np.ndarray, alpha: float) -> tuple[np.ndarray, float]:
    """Weights and intercept minimizing ||y - xw - b||^2 + alpha ||w||^2 (intercept unpenalized)."""
    xm, ym = x.mean(axis=0), y.mean()
    xc, yc = x - xm, y - ym
    if alpha == 0.0:
        w = np.linalg.lstsq(xc, yc, rcond=None)[0]
    else:
        w = np.linalg.solve(xc.T @ xc + alpha * np.eye(x.shape[1]), xc.T @ yc)
    return w, float(ym - xm @ w)


def regression_metrics(y: np.ndarray, pred: np.ndarray) -> dict[str, float | None]:
    y = np.asarray(y, dtype=np.float64)
    err = np.asarray(pred, dtype=np.float64) - y
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(err**2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else 0.0
    mape = None if np.any(y == 0) else float(np.mean(np.abs(err / y)) * 100.0)
    return {
        "rmse": float(np.sqrt(np.mean(err**2))),
        "mae": float(np.mean(np.abs(err))),
        "r2": r2,
        "mape": mape,
    }


# ------------------------------------------------------------ classification


def _logistic_objective(theta, x, onehot, l2):
    n, f = x.shape
    k = onehot.shape[1]
    w = theta[: f * k].reshape(f, k)
    b = theta[f * k:]
    logp = log_softmax(x @ w + b, axis=1)
    loss = -np.sum(onehot * logp) / n + 0.5 * l2 * np.sum(w * w)
    d = (np.exp(logp) - onehot) / n
    grad = np.concatenate([(x.T @ d + l2 * w).ravel(), d.sum(axis=0)])
    return loss, grad


def logistic_solve(x: np.ndarray, labels: np.ndarray, n_classes: int, l2: float) -> tuple[np.ndarray, np.ndarray]:
    """Multinomial logistic regression by L-BFGS from a zero start."""
    f = x.shape[1]
    onehot = np.eye(n_classes)[labels]
    theta0 = np.zeros(f * n_classes + n_classes)
    res = minimize(_logistic_objective, theta0, args=(x, onehot, l2), jac=True, method="L-BFGS-B",
                   options={"maxiter": 500})
    return res.x[: f * n_classes].reshape(f, n_classes), res.x[f * n_classes:]


def classification_metrics(y: Sequence, pred: Sequence, classes: Sequence | None = None) -> dict:
    y = np.asarray(y, dtype=object)
    pred = np.asarray(pred, dtype=object)
    classes = sorted(set(y.tolist())) if classes is None else list(classes)
    per_class, support = {}, {}
    for c in classes:
        tp = int(np.sum((pred == c) & (y == c)))
        fp = int(np.sum((pred == c) & (y != c)))
        fn = int(np.sum((pred != c) & (y == c)))
        denom = 2 * tp + fp + fn
        per_class[c] = 2 * tp / denom if denom else 0.0
        support[c] = int(np.sum(y == c))
    present = [c for c in classes if support[c] > 0]
    total = sum(support.values())
    return {
        "macro_f1": float(np.mean([per_class[c] for c in present])) if present else 0.0,
        "weighted_f1": float(sum(per_class[c] * support[c] for c in classes) / total) if total else 0.0,
        "accuracy": float(np.mean(y == pred)) if len(y) else 0.0,
        "per_class_f1": per_class,
    }


# ------------------------------------------------------------------- fitting


def fit_probe(kind: str, x: np.ndarray, y: Sequence, seed: int = 0, split: Split | None = None) -> ProbeModel:
    """Fit on the train part of ``split``; pick regularization on its validation part."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise ProbeError(f"X has shape {x.shape} but y has {len(y)} rows")
    if not np.all(np.isfinite(x)):
        raise ProbeError("non-finite features")
    split = split or split_indices(len(x), seed)
    scaler = Standardizer.fit(x[split.train])
    xs = scaler(x)
    if kind == "ridge":
        yv = np.asarray(y, dtype=np.float64)
        best = None
        for alpha in RIDGE_ALPHAS:
            w, b = ridge_solve(xs[split.train], yv[split.train], alpha)
            rmse = float(np.sqrt(np.mean((xs[split.val] @ w + b - yv[split.val]) ** 2)))
            if best is None or rmse < best[0] - 1e-12:
                best = (rmse, alpha, w, b)
        _, alpha, w, b = best
        return ProbeModel("ridge", w[:, None], np.array([b]), alpha, scaler)
    if kind == "logistic":
        yo = np.asarray(y, dtype=object)
        classes = tuple(sorted(set(yo.tolist())))
        if len(classes) < 2:
            raise ProbeError("classification target has a single class")
        lookup = {c: i for i, c in enumerate(classes)}
        labels = np.array([lookup[c] for c in yo])
        best = None
        for l2 in LOGISTIC_L2:
            w, b = logistic_solve(xs[split.train], labels[split.train], len(classes), l2)
            acc = float(np.mean(np.argmax(xs[split.val] @ w + b, axis=1) == labels[split.val]))
            if best is None or acc > best[0]:
                best = (acc, l2, w, b)
        _, l2, w, b = best
        return ProbeModel("logistic", w, b, l2, scaler, classes)
    raise ProbeError(f"unknown probe kind {kind!r}")


def evaluate_probe(model: ProbeModel, x: np.ndarray, y: Sequence) -> dict:
    pred = model.predict(x)
    if model.kind == "ridge":
        return regression_metrics(np.asarray(y, dtype=np.float64), pred)
    return classification_metrics(y, pred, model.classes)


@dataclass
class MetricReport:
    task: str
    kind: str
    n_runs: int
    n_samples: int
    mean: dict[str, float | None]
    std: dict[str, float | None]
    per_class_f1: dict[str, float] = field(default_factory=dict)
    extra: dict[str, float] = field(default_factory=dict)

    @property
    def columns(self) -> tuple[str, ...]:
        return REGRESSION_METRICS if self.kind == "ridge" else CLASSIFICATION_METRICS

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "runs", "samples", *[f"{c}_{s}" for c in self.columns for s in ("mean", "std")]])
        cells = []
        for c in self.columns:
            for v in (self.mean[c], self.std[c]):
                cells.append("" if v is None else f"{v:.6f}")
        w.writerow([self.task, self.n_runs, self.n_samples, *cells])
        return buf.getvalue()

    def per_class_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "f1_mean"])
        for c, v in sorted(self.per_class_f1.items()):
            w.writerow([c, f"{v:.6f}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"task": self.task, "kind": self.kind, "n_runs": self.n_runs, "n_samples": self.n_samples,
                "mean": self.mean, "std": self.std, "per_class_f1": self.per_class_f1, "extra": self.extra}


def _aggregate(values: list[float | None]) -> tuple[float | None, float | None]:
    if any(v is None for v in values):
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def run_probe(kind: str, x: np.ndarray, y: Sequence, n_runs: int = 10, seed: int = 0, task: str = "") -> MetricReport:
    """Fit and score ``n_runs`` independent splits seeded ``seed, seed+1, ...``."""
    x = np.asarray(x, dtype=np.float64)
    runs = []
    for r in range(n_runs):
        split = split_indices(len(x), seed + r)
        model = fit_probe(kind, x, y, split=split)
        y_test = [y[i] for i in split.test] if not isinstance(y, np.ndarray) else y[split.test]
        runs.append(evaluate_probe(model, x[split.test], y_test))
    names = REGRESSION_METRICS if kind == "ridge" else CLASSIFICATION_METRICS
    mean, std = {}, {}
    for name in names:
        mean[name], std[name] = _aggregate([run[name] for run in runs])
    per_class = {}
    if kind == "logistic":
        for c in runs[0]["per_class_f1"]:
            per_class[str(c)] = float(np.mean([run["per_class_f1"][c] for run in runs]))
    return MetricReport(task, kind, n_runs, len(x), mean, std, per_class)
