"""Slow, obviously-correct reference implementations.

These exist to cross-check the production code: every function here is
written from the textbook definition with explicit loops, shares no code
with the module it checks, and is only practical for small inputs.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np

# -- spatial operators -------------------------------------------------------------


def sqdist_loop(points, a: int, b: int) -> float:
    pa, pb = points[a], points[b]
    return sum((float(pa[k]) - float(pb[k])) ** 2 for k in range(3))


def ball_query_bruteforce(points, centroid: int, radius: float) -> list[int]:
    """All indices within ``radius``, sorted by (distance, index)."""
    hits = [(sqdist_loop(points, centroid, j), j) for j in range(len(points))]
    return [j for d, j in sorted(hits) if d <= radius * radius]


def knn_bruteforce(points, centroid: int, k: int) -> list[int]:
    hits = sorted((sqdist_loop(points, centroid, j), j) for j in range(len(points)))
    return [j for _, j in hits[:k]]


def fps_bruteforce(points, num: int, first: int) -> list[int]:
    """Greedy max-min selection, recomputing every distance from scratch."""
    chosen = [first]
    while len(chosen) < num:
        best, best_d = None, -1.0
        for j in range(len(points)):
            if j in chosen:
                continue
            d = min(sqdist_loop(points, j, c) for c in chosen)
            if d > best_d:
                best, best_d = j, d
        chosen.append(best)
    return chosen


# -- classification counts -----------------------------------------------------------


def accuracy_recount(y_true, y_pred) -> float:
    hits = sum(1 for a, b in zip(y_true, y_pred) if a == b)
    return hits / len(y_true)


def miou_sets(y_true, y_pred) -> float:
    """Per-class IoU from explicit index sets; classes seen nowhere are skipped."""
    classes = sorted(set(y_true) | set(y_pred))
    ious = []
    for c in classes:
        t = {i for i, v in enumerate(y_true) if v == c}
        p = {i for i, v in enumerate(y_pred) if v == c}
        ious.append(len(t & p) / len(t | p))
    return sum(ious) / len(ious)


# -- clustering ---------------------------------------------------------------------


def pair_counts(t: Sequence, p: Sequence) -> tuple[int, int, int, int]:
    """(same/same, same-in-t only, same-in-p only, different/different) over all pairs."""
    ss = st = sp = dd = 0
    for i, j in itertools.combinations(range(len(t)), 2):
        a, b = t[i] == t[j], p[i] == p[j]
        if a and b:
            ss += 1
        elif a:
            st += 1
        elif b:
            sp += 1
        else:
            dd += 1
    return ss, st, sp, dd


def ari_pairs(t, p) -> float:
    ss, st, sp, dd = pair_counts(t, p)
    m = ss + st + sp + dd
    if m == 0:
        return 1.0
    same_t, same_p = ss + st, ss + sp
    expected = same_t * same_p / m
    top = (same_t + same_p) / 2
    if top == expected:
        return 1.0
    return (ss - expected) / (top - expected)


def fm_pairs(t, p) -> float:
    ss, st, sp, _ = pair_counts(t, p)
    if ss + st == 0 and ss + sp == 0:
        return 1.0
    if ss == 0:
        return 0.0
    return ss / math.sqrt((ss + st) * (ss + sp))


def entropy(x) -> float:
    n = len(x)
    return -math.fsum((x.count(a) / n) * math.log(x.count(a) / n) for a in set(x))


def conditional_entropy(x, given) -> float:
    """H(x | given) = sum over joint cells of -p(x, g) log p(x | g)."""
    n = len(x)
    out = []
    for g in set(given):
        idx = [i for i in range(n) if given[i] == g]
        for a in set(x[i] for i in idx):
            nxg = sum(1 for i in idx if x[i] == a)
            out.append(-(nxg / n) * math.log(nxg / len(idx)))
    return math.fsum(out)


def mutual_information(t, p) -> float:
    n = len(t)
    terms = []
    for a in set(t):
        for b in set(p):
            nab = sum(1 for i in range(n) if t[i] == a and p[i] == b)
            if nab:
                terms.append(nab / n * math.log(n * nab / (t.count(a) * p.count(b))))
    return math.fsum(terms)


def homogeneity_completeness_v(t, p) -> tuple[float, float, float]:
    ht, hp = entropy(t), entropy(p)
    h = 1.0 if ht == 0 else 1 - conditional_entropy(t, p) / ht
    c = 1.0 if hp == 0 else 1 - conditional_entropy(p, t) / hp
    v = 0.0 if h + c == 0 else 2 * h * c / (h + c)
    return h, c, v


def expected_mi_permutations(t, p) -> float:
    """E[MI] over every reordering of ``p`` (the hypergeometric null model)."""
    n = len(t)
    t_arr = np.asarray(t)
    p_arr = np.asarray(p)
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    shuffled = p_arr[perms]                       # (n!, n)
    ta = sorted(set(t))
    pb = sorted(set(p))
    total = np.zeros(len(perms))
    for a in ta:
        ia = t_arr == a
        na = int(ia.sum())
        for b in pb:
            nb = int((p_arr == b).sum())
            nab = (shuffled[:, ia] == b).sum(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                term = np.where(nab > 0, nab / n * np.log(n * nab / (na * nb)), 0.0)
            total += term
    return math.fsum(total) / len(perms)


def ami_max(t, p) -> float:
    if len(set(t)) == len(set(p)) == 1:
        return 1.0
    mi = mutual_information(t, p)
    emi = expected_mi_permutations(t, p)
    denom = max(entropy(t), entropy(p)) - emi
    if abs(denom) < 1e-15:
        return 1.0
    return (mi - emi) / denom


def silhouette_loop(x, labels) -> float:
    n = len(labels)
    dist = [[math.sqrt(sum((float(x[i][k]) - float(x[j][k])) ** 2 for k in range(len(x[i])))) for j in range(n)] for i in range(n)]
    scores = []
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            scores.append(0.0)
            continue
        a = math.fsum(dist[i][j] for j in own) / len(own)
        b = min(
            math.fsum(dist[i][j] for j in range(n) if labels[j] == c) / sum(1 for j in range(n) if labels[j] == c)
            for c in set(labels) if c != labels[i]
        )
        scores.append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
    return math.fsum(scores) / n


def calinski_harabasz_loop(x, labels) -> float:
    x = [[float(v) for v in row] for row in x]
    n, dim = len(x), len(x[0])
    clusters = sorted(set(labels))
    k = len(clusters)
    mean = [math.fsum(r[d] for r in x) / n for d in range(dim)]
    between, within = [], []
    for c in clusters:
        rows = [x[i] for i in range(n) if labels[i] == c]
        cm = [math.fsum(r[d] for r in rows) / len(rows) for d in range(dim)]
        between.append(len(rows) * math.fsum((cm[d] - mean[d]) ** 2 for d in range(dim)))
        within.extend(math.fsum((r[d] - cm[d]) ** 2 for d in range(dim)) for r in rows)
    b, w = math.fsum(between), math.fsum(within)
    if w == 0:
        return 1.0
    return (b / (k - 1)) / (w / (n - k))


# -- parameter accounting ---------------------------------------------------------------


def param_count_closed_form(
    *, embed: Sequence[int], num_patches: int, features: int, token_hidden: int,
    channel_hidden: int, depth: int, token_mixer: str, head_hidden: Sequence[int],
    num_classes: int, task: str = "classification", positional: int = 7,
) -> int:
    """Hand-derived parameter total.

    linear a->b: ab + b; batch norm / layer norm over c: 2c; patch-axis
    mixing over P: P^2 + P.
    """
    P, Fe = num_patches, features
    total = 0
    fin = positional
    for c in embed:
        total += fin * c + c + 2 * c
        fin = c
    gate = P * P + P + 2 * P
    token = 2 * Fe + (Fe * token_hidden + token_hidden) + (token_hidden * Fe + Fe)
    if token_mixer == "attentive":
        token += 2 * gate
    channel = 2 * Fe + (Fe * channel_hidden + channel_hidden) + (channel_hidden * Fe + Fe)
    block = channel + (token if token_mixer != "none" else 0)
    total += depth * block + 2 * Fe
    fin = Fe
    if task == "segmentation":
        total += 3 * Fe * Fe + Fe + 2 * Fe
    for h in head_hidden:
        total += fin * h + h + 2 * h
        fin = h
    total += fin * num_classes + num_classes
    return total
