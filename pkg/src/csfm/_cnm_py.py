"""Pure-Python greedy agglomeration kernel.

Reference implementation of the merge-trace inner loop; the compiled twin in
``_cnm_fast.pyx`` must produce bit-identical output.  Both backends follow the
same conventions:

* communities start as singletons carrying their node index as id; a merge of
  the pair ``(p, q)`` with ``p < q`` keeps id ``p`` and retires ``q``;
* only edge-connected pairs are merge candidates;
* candidate scan is in ascending ``(p, q)`` order and a candidate replaces the
  incumbent only when its gain exceeds it by more than 1e-12, so exact ties
  resolve to the lexicographically smallest pair;
* merge bookkeeping iterates neighbors in ascending id order so float
  accumulation order matches the compiled kernel.
"""
from __future__ import annotations

TIE_TOL = 1e-12


def merge_trace(n, edges_u, edges_v):
    """Run greedy modularity agglomeration to a single community.

    Returns ``(merges_a, merges_b, q_after)`` where step ``k`` merged
    community ``merges_b[k]`` into ``merges_a[k]`` and left modularity
    ``q_after[k]``.  The caller guarantees a connected simple graph with at
    least one edge.
    """
    m = len(edges_u)
    inv2m = 1.0 / (2.0 * m)

    dsum = [0] * n
    nbr = [dict() for _ in range(n)]
    for u, v in zip(edges_u, edges_v):
        u, v = int(u), int(v)
        dsum[u] += 1
        dsum[v] += 1
        nbr[u][v] = nbr[u].get(v, 0) + 1
        nbr[v][u] = nbr[v].get(u, 0) + 1

    q = 0.0
    for i in range(n):
        a = dsum[i] * inv2m
        q -= a * a

    alive = [True] * n
    merges_a, merges_b, q_after = [], [], []

    for _ in range(n - 1):
        best_p = -1
        best_q = -1
        best_dq = 0.0
        for p in range(n):
            if not alive[p]:
                continue
            dsp = dsum[p]
            for r in sorted(nbr[p]):
                if r <= p:
                    continue
                cnt = nbr[p][r]
                dq = 2.0 * (cnt * inv2m - (dsp * inv2m) * (dsum[r] * inv2m))
                if best_p < 0 or dq > best_dq + TIE_TOL:
                    best_p, best_q, best_dq = p, r, dq
        if best_p < 0:
            break  # disconnected input; caller violated the precondition

        p, r = best_p, best_q
        for s in sorted(nbr[r]):
            cnt = nbr[r][s]
            if s == p:
                continue
            nbr[p][s] = nbr[p].get(s, 0) + cnt
            nbr[s][p] = nbr[p][s]
            del nbr[s][r]
        del nbr[p][r]
        nbr[r] = {}
        dsum[p] += dsum[r]
        alive[r] = False

        q = q + best_dq
        merges_a.append(p)
        merges_b.append(r)
        q_after.append(q)

    return merges_a, merges_b, q_after
