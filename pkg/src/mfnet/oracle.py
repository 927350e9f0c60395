"""Brute-force exact inference for small graphs, used as a verification oracle."""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .mrf import FactorialDistribution, PairwiseMRF, unnormalized_kl

ENUMERATION_LIMIT = 10**7
_CHUNK = 1 << 16


def _check_guard(mrf: PairwiseMRF) -> int:
    total = mrf.K ** mrf.n_vertices
    if total > ENUMERATION_LIMIT:
        raise ValueError(
            f"state space {mrf.K}^{mrf.n_vertices} exceeds the enumeration "
            f"limit of {ENUMERATION_LIMIT}"
        )
    return total


def _assignment_chunk(codes: np.ndarray, n: int, K: int) -> np.ndarray:
    """Decode mixed-radix codes into (len(codes), n) label arrays."""
    out = np.empty((len(codes), n), dtype=np.int64)
    rem = codes.copy()
    for s in range(n - 1, -1, -1):
        out[:, s] = rem % K
        rem //= K
    return out


def _chunk_energies(mrf: PairwiseMRF, x: np.ndarray) -> np.ndarray:
    n = mrf.n_vertices
    e = mrf.unary[np.arange(n)[None, :], x].sum(axis=1)
    if mrf.topology.n_edges:
        lo = mrf.topology.edges[:, 0]
        hi = mrf.topology.edges[:, 1]
        e = e + mrf.pairwise[
            np.arange(mrf.topology.n_edges)[None, :], x[:, lo], x[:, hi]
        ].sum(axis=1)
    return e


def brute_force_log_partition(mrf: PairwiseMRF) -> float:
    """log sum_x exp(E(x)) by full enumeration."""
    total = _check_guard(mrf)
    parts = []
    for start in range(0, total, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        x = _assignment_chunk(codes, mrf.n_vertices, mrf.K)
        parts.append(logsumexp(_chunk_energies(mrf, x)))
    return float(logsumexp(np.array(parts)))


def brute_force_marginals(mrf: PairwiseMRF):
    """Exact unary and pairwise marginals of p, by full enumeration.

    Returns (unary_marginals (n, K), pairwise_marginals (E, K, K)).
    """
    total = _check_guard(mrf)
    log_z = brute_force_log_partition(mrf)
    n, K = mrf.n_vertices, mrf.K
    unary_m = np.zeros((n, K))
    pair_m = np.zeros((mrf.topology.n_edges, K, K))
    edges = mrf.topology.edges
    for start in range(0, total, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        x = _assignment_chunk(codes, n, K)
        w = np.exp(_chunk_energies(mrf, x) - log_z)
        for s in range(n):
            np.add.at(unary_m[s], x[:, s], w)
        for e in range(len(edges)):
            np.add.at(pair_m[e], (x[:, edges[e, 0]], x[:, edges[e, 1]]), w)
    return unary_m, pair_m


def exact_kl(q: FactorialDistribution, mrf: PairwiseMRF) -> float:
    """True KL(q || p), i.e. the unnormalized value plus log Z."""
    return unnormalized_kl(q, mrf) + brute_force_log_partition(mrf)
