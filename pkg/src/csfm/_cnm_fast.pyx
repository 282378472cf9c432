# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled greedy agglomeration kernel.

Semantics mirror ``_cnm_py.merge_trace`` exactly (scan order, tie rule,
float expression order); the two backends must return bit-identical traces.
"""
from cython.operator cimport dereference, preincrement
from libcpp.map cimport map as cmap
from libcpp.vector cimport vector
from libcpp.pair cimport pair

cdef double TIE_TOL = 1e-12


def merge_trace(n, edges_u, edges_v):
    cdef long nn = n
    cdef long m = len(edges_u)
    cdef double inv2m = 1.0 / (2.0 * m)

    cdef vector[long] dsum = vector[long](nn, 0)
    cdef vector[cmap[long, long]] nbr = vector[cmap[long, long]](nn)
    cdef vector[char] alive = vector[char](nn, 1)

    cdef long u, v, i, p, r, s, cnt, dsp
    for i in range(m):
        u = edges_u[i]
        v = edges_v[i]
        dsum[u] += 1
        dsum[v] += 1
        nbr[u][v] = nbr[u][v] + 1 if nbr[u].count(v) else 1
        nbr[v][u] = nbr[v][u] + 1 if nbr[v].count(u) else 1

    cdef double q = 0.0
    cdef double a
    for i in range(nn):
        a = dsum[i] * inv2m
        q -= a * a

    merges_a = []
    merges_b = []
    q_after = []

    cdef long best_p, best_q
    cdef double best_dq, dq
    cdef cmap[long, long].iterator it, qit
    cdef vector[pair[long, long]] moved

    for _ in range(nn - 1):
        best_p = -1
        best_q = -1
        best_dq = 0.0
        for p in range(nn):
            if not alive[p]:
                continue
            dsp = dsum[p]
            it = nbr[p].begin()
            while it != nbr[p].end():
                r = dereference(it).first
                cnt = dereference(it).second
                preincrement(it)
                if r <= p:
                    continue
                dq = 2.0 * (cnt * inv2m - (dsp * inv2m) * (dsum[r] * inv2m))
                if best_p < 0 or dq > best_dq + TIE_TOL:
                    best_p = p
                    best_q = r
                    best_dq = dq
        if best_p < 0:
            break

        p = best_p
        r = best_q
        moved.clear()
        qit = nbr[r].begin()
        while qit != nbr[r].end():
            moved.push_back(pair[long, long](dereference(qit).first, dereference(qit).second))
            preincrement(qit)
        for i in range(<long>moved.size()):
            s = moved[i].first
            cnt = moved[i].second
            if s == p:
                continue
            nbr[p][s] = nbr[p][s] + cnt if nbr[p].count(s) else cnt
            nbr[s][p] = nbr[p][s]
            nbr[s].erase(r)
        nbr[p].erase(r)
        nbr[r].clear()
        dsum[p] += dsum[r]
        alive[r] = 0

        q = q + best_dq
        merges_a.append(p)
        merges_b.append(r)
        q_after.append(q)

    return merges_a, merges_b, q_after
