"""Shared test helpers: independent oracles and small constructors.

The oracles here deliberately re-derive results from first principles
(exhaustive subset enumeration, exact rational arithmetic) so the package
implementations are checked against a second, structurally different route.
"""

import itertools
from fractions import Fraction

import numpy as np

from sigarchive import ArchiveEntry, FeatureMatrix, SignatureArchive


def fm(values, prefix="s") -> FeatureMatrix:
    """FeatureMatrix with generated sample ids for an array-like."""
    arr = np.asarray(values, dtype=np.float64)
    return FeatureMatrix(arr, tuple(f"{prefix}{j}" for j in range(arr.shape[1])))


def toy_archive(signatures, labels) -> SignatureArchive:
    """Archive built directly from unit-norm signature columns."""
    sigs = np.asarray(signatures, dtype=np.float64)
    entries = tuple(
        ArchiveEntry(
            signature=sigs[:, j] / np.linalg.norm(sigs[:, j]),
            label=labels[j],
            purity=1.0,
            support=1,
            path=f"root/k{sigs.shape[1]}/c{j}",
            depth=0,
        )
        for j in range(sigs.shape[1])
    )
    names = tuple(f"f{i}" for i in range(sigs.shape[0]))
    return SignatureArchive(entries, names, {"toy": True})


def nnls_exhaustive(a, b):
    """Brute-force nonnegative least squares by subset enumeration.

    Solves unconstrained least squares on every support set and keeps the
    best feasible (elementwise nonnegative) candidate.  The optimum of the
    constrained problem is feasible on its own support, so the minimum over
    candidates is the global optimum.  Exponential in p; test-scale only.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, p = a.shape
    best = np.zeros(p)
    best_obj = float(np.linalg.norm(b))
    for r in range(1, p + 1):
        for cols in itertools.combinations(range(p), r):
            sol = np.linalg.lstsq(a[:, list(cols)], b, rcond=None)[0]
            if np.all(sol >= -1e-12):
                x = np.zeros(p)
                x[list(cols)] = np.clip(sol, 0.0, None)
                obj = float(np.linalg.norm(a @ x - b))
                if obj < best_obj:
                    best, best_obj = x, obj
    return best, best_obj


def rc_points_exact(scores, correct):
    """Risk-coverage points as exact rationals, re-derived from raw scores.

    One point per distinct score, swept descending: coverage = fraction of
    samples at or above the threshold, risk = error fraction among them.
    """
    n = len(scores)
    pts = []
    for th in sorted(set(scores), reverse=True):
        covered = [i for i, s in enumerate(scores) if s >= th]
        cov = Fraction(len(covered), n)
        risk = (Fraction(sum(1 for i in covered if not correct[i]), len(covered))
                if covered else Fraction(0))
        pts.append((cov, risk))
    pts.sort()
    return pts


def aurc_bruteforce(scores, correct) -> Fraction:
    """Exact-rational area under the risk-coverage curve.

    Trapezoids between consecutive points, the risk of the smallest positive
    coverage extended flat down to coverage 0, and the last risk extended
    flat up to coverage 1.
    """
    pts = [p for p in rc_points_exact(scores, correct) if p[0] > 0]
    c1, r1 = pts[0]
    total = c1 * r1
    for (ca, ra), (cb, rb) in zip(pts, pts[1:]):
        total += (cb - ca) * (ra + rb) / 2
    cl, rl = pts[-1]
    total += (1 - cl) * rl
    return total
