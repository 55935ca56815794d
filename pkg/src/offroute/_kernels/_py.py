"""Pure-Python twins of the compiled sweep kernels.

Same signatures and semantics as ``_cy.pyx``; selected at import time when the
compiled module is unavailable (or forced via OFFROUTE_PURE_PYTHON=1).  All
graph arguments are flat CSR arrays so both backends stay interchangeable.
"""

from __future__ import annotations

import numpy as np


def kahn_topo(n, out_ptr, out_eids, dst, active):
    """Topological order of all n nodes over the active edge set.

    Returns (ok, order); ok is False when a cycle prevents ordering, in which
    case order is only partially filled.
    """
    indeg = np.zeros(n, dtype=np.int32)
    act_dst = dst[active.view(bool)] if active.dtype == np.uint8 else dst[active]
    np.add.at(indeg, act_dst, 1)
    order = np.empty(n, dtype=np.int32)
    queue = [i for i in range(n) if indeg[i] == 0]
    head = 0
    k = 0
    while head < len(queue):
        i = queue[head]
        head += 1
        order[k] = i
        k += 1
        for e in out_eids[out_ptr[i]:out_ptr[i + 1]]:
            if active[e]:
                j = dst[e]
                indeg[j] -= 1
                if indeg[j] == 0:
                    queue.append(j)
    return k == n, order


def sweep_traffic(order, out_ptr, out_eids, dst, phi_e, active, inj):
    """Forward sweep: per-node traffic from injections along the support DAG."""
    t = inj.astype(np.float64, copy=True)
    for i in order:
        ti = t[i]
        if ti == 0.0:
            continue
        for e in out_eids[out_ptr[i]:out_ptr[i + 1]]:
            if active[e]:
                t[dst[e]] += ti * phi_e[e]
    return t


def sweep_marginal_result(order, out_ptr, out_eids, dst, phi_e, active, coef_e, dest):
    """Reverse sweep for result-stage marginals.

    Returns (marg, hops, improper): the per-node marginal cost of extra result
    traffic, the longest support path length to the destination, and the flag
    marking nodes whose downstream support contains a non-descending link.
    """
    n = len(out_ptr) - 1
    marg = np.zeros(n)
    hops = np.zeros(n, dtype=np.int32)
    improper = np.zeros(n, dtype=np.uint8)
    for idx in range(n - 1, -1, -1):
        i = order[idx]
        if i == dest:
            continue
        acc = 0.0
        h = 0
        for e in out_eids[out_ptr[i]:out_ptr[i + 1]]:
            if active[e]:
                j = dst[e]
                acc += phi_e[e] * (coef_e[e] + marg[j])
                if hops[j] + 1 > h:
                    h = hops[j] + 1
        marg[i] = acc
        hops[i] = h
        bad = 0
        for e in out_eids[out_ptr[i]:out_ptr[i + 1]]:
            if active[e]:
                j = dst[e]
                if improper[j] or marg[j] >= acc:
                    bad = 1
                    break
        improper[i] = bad
    return marg, hops, improper


def sweep_marginal_data(order, out_ptr, out_eids, dst, phi_e, active, coef_e,
                        cpu_term, phi_cpu):
    """Reverse sweep for data-stage marginals; the CPU slot terminates paths."""
    n = len(out_ptr) - 1
    marg = np.zeros(n)
    hops = np.zeros(n, dtype=np.int32)
    improper = np.zeros(n, dtype=np.uint8)
    for idx in range(n - 1, -1, -1):
        i = order[idx]
        acc = phi_cpu[i] * cpu_term[i] if phi_cpu[i] > 0.0 else 0.0
        h = 0
        for e in out_eids[out_ptr[i]:out_ptr[i + 1]]:
            if active[e]:
                j = dst[e]
                acc += phi_e[e] * (coef_e[e] + marg[j])
                if hops[j] + 1 > h:
                    h = hops[j] + 1
        marg[i] = acc
        hops[i] = h
        bad = 0
        for e in out_eids[out_ptr[i]:out_ptr[i + 1]]:
            if active[e]:
                j = dst[e]
                if improper[j] or marg[j] >= acc:
                    bad = 1
                    break
        improper[i] = bad
    return marg, hops, improper


def update_rows(out_ptr, out_eids, dst, phi_e, phi_cpu, delta_e, delta_cpu,
                m_e, m_cpu, usable_e, usable_cpu, beta, gap_tol, skip_node,
                gp_mode):
    """Replace every node's forwarding row by its scaled simplex-QP update.

    Mutates phi_e (and phi_cpu when the row has a CPU slot).  Coordinates are
    usable when unblocked and allowed, or when they already carry mass.  With
    ``gp_mode`` the scaling entry at the per-row delta argmin is zeroed (the
    non-scaled gradient-projection variant).  Returns -1, or the id of a node
    whose row carries mass but has no usable coordinate.
    """
    n = len(out_ptr) - 1
    has_cpu = phi_cpu is not None
    for i in range(n):
        if i == skip_node:
            continue
        eids = out_eids[out_ptr[i]:out_ptr[i + 1]]
        use_e = [e for e in eids if usable_e[e] or phi_e[e] > 0.0]
        use_cpu = has_cpu and (usable_cpu[i] or phi_cpu[i] > 0.0)
        k = len(use_e) + (1 if use_cpu else 0)
        if k == 0:
            mass = phi_e[eids].sum() + (phi_cpu[i] if has_cpu else 0.0)
            if mass > 1e-9:
                return i
            continue
        phi = np.empty(k)
        delta = np.empty(k)
        mdiag = np.empty(k)
        if use_cpu:
            phi[0] = phi_cpu[i]
            delta[0] = delta_cpu[i]
            mdiag[0] = m_cpu[i]
        off = 1 if use_cpu else 0
        for a, e in enumerate(use_e):
            phi[off + a] = phi_e[e]
            delta[off + a] = delta_e[e]
            mdiag[off + a] = m_e[e]
        if gp_mode:
            mdiag[int(np.argmin(delta))] = 0.0
        if k == 1:
            v = np.ones(1)
        else:
            total = phi.sum()
            if total <= 0.0:
                # zero-mass row (inactive task at this node): park it on the
                # cheapest usable coordinate.
                v = np.zeros(k)
                v[int(np.argmin(delta))] = 1.0
            else:
                phi = phi / total
                v = qp_row(phi, delta, mdiag, beta, gap_tol)
        if use_cpu:
            phi_cpu[i] = v[0]
        for a, e in enumerate(use_e):
            phi_e[e] = v[off + a]
    return -1


def qp_row(phi, delta, mdiag, beta, gap_tol):
    """Exact minimizer of  delta . (v - phi) + (v - phi)^T diag(mdiag) (v - phi)
    over the simplex {v >= 0, sum v = 1}.

    Coordinates with zero scaling absorb mass at their minimum delta; when the
    whole diagonal is zero the move degenerates to shifting mass toward the
    argmin coordinate with step ``beta`` (full shift when beta is inf), and
    only coordinates whose delta gap exceeds ``gap_tol`` are drained.
    """
    k = len(phi)
    if k == 1:
        return np.ones(1)
    pos = mdiag > 0.0
    if not pos.any():
        dmin = delta.min()
        jmin = int(np.argmin(delta))
        v = phi.astype(np.float64, copy=True)
        gaps = delta - dmin
        move = gaps > gap_tol
        if np.isinf(beta):
            moved = v[move].sum()
            v[move] = 0.0
        else:
            amounts = np.minimum(v[move], beta * gaps[move])
            v[move] -= amounts
            moved = amounts.sum()
        v[jmin] += moved
        return v

    idx_p = np.nonzero(pos)[0]
    idx_z = np.nonzero(~pos)[0]
    m2 = 2.0 * mdiag[idx_p]
    dp = delta[idx_p]
    pp = phi[idx_p]
    # v_j(lam) = max(0, pp + (lam - dp)/m2); breakpoint where v_j leaves 0.
    brk = dp - m2 * pp
    order = np.argsort(brk, kind="stable")
    brk_s = brk[order]
    inv = 1.0 / m2[order]
    # Past breakpoint s the active set is order[:s+1]; S(lam) = A_s + B_s*lam.
    inv_cum = np.cumsum(inv)
    contrib = pp[order] - dp[order] / m2[order]
    a_cum = np.cumsum(contrib)
    d0min = delta[idx_z].min() if len(idx_z) else np.inf

    lam = None
    for s in range(len(brk_s)):
        lo = brk_s[s]
        hi = brk_s[s + 1] if s + 1 < len(brk_s) else np.inf
        cand = (1.0 - a_cum[s]) / inv_cum[s]
        if cand >= lo - 1e-300 and cand <= hi:
            lam = cand
            break
    if lam is None:
        lam = (1.0 - a_cum[-1]) / inv_cum[-1]

    v = np.zeros(k)
    if lam <= d0min:
        v[idx_p] = np.maximum(0.0, pp + (lam - dp) / m2)
    else:
        vz = np.maximum(0.0, pp + (d0min - dp) / m2)
        v[idx_p] = vz
        resid = 1.0 - vz.sum()
        if resid > 0.0:
            winners = idx_z[delta[idx_z] <= d0min]
            v[winners] = resid / len(winners)
    s = v.sum()
    if s <= 0.0:
        v[int(np.argmin(delta))] = 1.0
        return v
    return v / s
