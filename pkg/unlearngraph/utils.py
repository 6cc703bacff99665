#!/usr/bin/env python
"""
Miscellaneous Routines.
"""
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np


# Node pairs
##
def num_pairs(n):
    """Returns the number of unordered node pairs, n(n-1)/2."""
    return n*(n-1)//2


def upper_pairs(n):
    """Returns (us, vs), the pairs u < v in lexicographic order."""
    return np.triu_indices(n, k=1)


def is_symmetric(m):
    return m.ndim == 2 and m.shape[0] == m.shape[1] and np.array_equal(m, m.T)


def symmetrize_pairs(g):
    """Folds both mirror entries into one value per undirected pair.

    g_sym[u][v] = g[u][v] + g[v][u], zero diagonal.
    """
    s = g + g.T
    np.fill_diagonal(s, 0.0)
    return s


# Numbers
##
SNAP_TOLERANCE = 1e-12


def floor_count(x):
    """Floors a nonnegative budget term, tolerating binary-float residue
    such as 0.29*100 = 28.999999999999996."""
    if x <= 0:
        return 0
    r = round(x)
    if math.isclose(x, r, rel_tol=SNAP_TOLERANCE, abs_tol=SNAP_TOLERANCE):
        return int(r)
    return int(math.floor(x))


def mean_std(values):
    """Mean and population standard deviation."""
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        return (0.0, 0.0)
    return (float(a.mean()), float(a.std()))


def fmt_grad(x):
    return '%.17e' % x


def make_rng(seed):
    return np.random.default_rng(seed)


# Scheduling
##
def ordered_map(func, items, jobs=1):
    """Applies func to every item, at most `jobs` at a time.

    Results come back in input order whatever the schedule.
    """
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))
