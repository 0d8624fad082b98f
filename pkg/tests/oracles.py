"""Independent reference computations, written without the package's fast paths."""

import itertools

import numpy as np
from scipy.optimize import linprog


def pair_cost(mu_a, cov_a, mu_b, cov_b):
    total = 0.0
    for x, y in zip(np.ravel(mu_a), np.ravel(mu_b)):
        total += (x - y) ** 2
    for x, y in zip(np.ravel(cov_a), np.ravel(cov_b)):
        total += (x - y) ** 2
    return total


def ctd_double_loop(mixture, targets):
    total = 0.0
    for i in range(len(mixture)):
        best = min(pair_cost(mixture.means[i], mixture.covariances[i],
                             targets.means[j], targets.covariances[j]) for j in range(len(targets)))
        total += mixture.weights[i] * best
    return total


def set_partitions(n, m):
    """Every partition of range(n) into exactly m non-empty labelled-by-first-element blocks."""
    for labels in itertools.product(range(m), repeat=n):
        # canonical form: block ids appear in order of first use
        seen = []
        for lab in labels:
            if lab not in seen:
                seen.append(lab)
        if len(seen) == m and seen == list(range(m)):
            yield np.array(labels)


def clustered_objective(mixture, labels, m):
    total = 0.0
    for j in range(m):
        idx = np.flatnonzero(labels == j)
        w = mixture.weights[idx]
        mu = np.average(mixture.means[idx], axis=0, weights=w)
        cov = np.average(mixture.covariances[idx], axis=0, weights=w)
        for i in idx:
            total += mixture.weights[i] * pair_cost(mixture.means[i], mixture.covariances[i], mu, cov)
    return total


def exhaustive_optimum(mixture, m):
    return min(clustered_objective(mixture, labels, m) for labels in set_partitions(len(mixture), m))


def transport_lp(mixture, targets, target_mass):
    """Full transportation LP over couplings with both marginals fixed."""
    n, m = len(mixture), len(targets)
    c = np.array([[pair_cost(mixture.means[i], mixture.covariances[i],
                             targets.means[j], targets.covariances[j]) for j in range(m)]
                  for i in range(n)])
    a_eq = []
    b_eq = []
    for i in range(n):
        row = np.zeros((n, m))
        row[i, :] = 1
        a_eq.append(row.ravel())
        b_eq.append(mixture.weights[i])
    for j in range(m):
        col = np.zeros((n, m))
        col[:, j] = 1
        a_eq.append(col.ravel())
        b_eq.append(target_mass[j])
    res = linprog(c.ravel(), A_eq=np.array(a_eq), b_eq=np.array(b_eq), bounds=(0, None),
                  method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                           "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0, res.message
    return res.fun
