"""Binary classification metrics reported after training."""
import numpy as np
from scipy.stats import rankdata

EPS = 1e-15


def log_loss(y, p):
    y = np.asarray(y, dtype=float)
    p = np.clip(np.asarray(p, dtype=float), EPS, 1 - EPS)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def accuracy(y, p, threshold=0.5):
    y = np.asarray(y)
    return float(np.mean((np.asarray(p) >= threshold) == (y == 1)))


def auc(y, p):
    """Area under the ROC curve as the Mann-Whitney rank statistic (ties count half)."""
    y = np.asarray(y)
    n_pos = int((y == 1).sum())
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(p)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def f1(y, p, threshold=0.5):
    y = np.asarray(y) == 1
    pred = np.asarray(p) >= threshold
    tp = int((y & pred).sum())
    denom = int(y.sum()) + int(pred.sum())
    return 2 * tp / denom if denom else 0.0


def summary(y, p):
    return {"accuracy": accuracy(y, p), "auc": auc(y, p), "f1": f1(y, p),
            "log_loss": log_loss(y, p), "n": int(len(y))}
