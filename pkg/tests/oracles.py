"""Slow, obviously-correct reference loops used to cross-check the vectorized code."""

from __future__ import annotations

import math

import numpy as np


def frobenius_loop(a, b) -> float:
    total = 0.0
    for i in range(len(a)):
        for j in range(len(a[0])):
            total += a[i][j] * b[i][j]
    return total


def matmul_loop(a, b):
    n, k, m = len(a), len(b), len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            for t in range(k):
                out[i][j] += a[i][t] * b[t][j]
    return np.array(out)


def softmax_ce_loop(w, x, labels, bias=None) -> float:
    """Mean cross-entropy of a linear softmax model, one sample at a time."""
    total = 0.0
    for xi, yi in zip(x, labels):
        logits = [sum(w[c][t] * xi[t] for t in range(len(xi))) + (0.0 if bias is None else bias[c])
                  for c in range(len(w))]
        top = max(logits)
        lse = top + math.log(sum(math.exp(z - top) for z in logits))
        total += lse - logits[yi]
    return total / len(x)


def accuracy_loop(w, x, labels) -> float:
    hits = 0
    for xi, yi in zip(x, labels):
        logits = [sum(w[c][t] * xi[t] for t in range(len(xi))) for c in range(len(w))]
        hits += int(max(range(len(logits)), key=lambda c: logits[c]) == yi)
    return 100.0 * hits / len(x)


def last_loop(r) -> float:
    n = len(r)
    return sum(r[n - 1][j] for j in range(n)) / n


def avg_loop(r) -> float:
    n = len(r)
    acc = 0.0
    for t in range(n):
        acc += sum(r[t][j] for j in range(t + 1)) / (t + 1)
    return acc / n


def bwt_loop(r) -> float:
    n = len(r)
    return sum(r[n - 1][j] - r[j][j] for j in range(n - 1)) / (n - 1)


def gram_schmidt_project(v: np.ndarray, dirs: list[np.ndarray]) -> np.ndarray:
    basis: list[np.ndarray] = []
    for d in dirs:
        u = d.astype(np.float64).copy()
        for q in basis:
            u -= (u @ q) * q
        nrm = np.linalg.norm(u)
        if nrm > 1e-12:
            basis.append(u / nrm)
    out = v.astype(np.float64).copy()
    for q in basis:
        out -= (out @ q) * q
    return out


def momentum_two_steps(x0, g1, g2, lr, beta):
    v1 = g1
    x1 = x0 - lr * v1
    v2 = beta * v1 + g2
    return x1, x1 - lr * v2
