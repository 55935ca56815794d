# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the sweep kernels in ``_py.py``.

Semantics must match the pure-Python module exactly; the parity test suite
runs both backends on the same inputs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, isinf


def kahn_topo(int n, int[:] out_ptr, int[:] out_eids, int[:] dst,
              unsigned char[:] active):
    cdef cnp.ndarray[cnp.int32_t] indeg_arr = np.zeros(n, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t] order_arr = np.empty(n, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t] queue_arr = np.empty(n, dtype=np.int32)
    cdef int[:] indeg = indeg_arr
    cdef int[:] order = order_arr
    cdef int[:] queue = queue_arr
    cdef Py_ssize_t m = dst.shape[0]
    cdef Py_ssize_t e, i, j, p
    cdef int head = 0, tail = 0, k = 0
    for e in range(m):
        if active[e]:
            indeg[dst[e]] += 1
    for i in range(n):
        if indeg[i] == 0:
            queue[tail] = <int> i
            tail += 1
    while head < tail:
        i = queue[head]
        head += 1
        order[k] = <int> i
        k += 1
        for p in range(out_ptr[i], out_ptr[i + 1]):
            e = out_eids[p]
            if active[e]:
                j = dst[e]
                indeg[j] -= 1
                if indeg[j] == 0:
                    queue[tail] = <int> j
                    tail += 1
    return k == n, order_arr


def sweep_traffic(int[:] order, int[:] out_ptr, int[:] out_eids, int[:] dst,
                  double[:] phi_e, unsigned char[:] active, double[:] inj):
    cdef Py_ssize_t n = order.shape[0]
    cdef cnp.ndarray[cnp.float64_t] t_arr = np.empty(n, dtype=np.float64)
    cdef double[:] t = t_arr
    cdef Py_ssize_t idx, i, p, e
    cdef double ti
    for idx in range(n):
        t[idx] = inj[idx]
    for idx in range(n):
        i = order[idx]
        ti = t[i]
        if ti == 0.0:
            continue
        for p in range(out_ptr[i], out_ptr[i + 1]):
            e = out_eids[p]
            if active[e]:
                t[dst[e]] += ti * phi_e[e]
    return t_arr


def sweep_marginal_result(int[:] order, int[:] out_ptr, int[:] out_eids,
                          int[:] dst, double[:] phi_e, unsigned char[:] active,
                          double[:] coef_e, int dest):
    cdef Py_ssize_t n = order.shape[0]
    cdef cnp.ndarray[cnp.float64_t] marg_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t] hops_arr = np.zeros(n, dtype=np.int32)
    cdef cnp.ndarray[cnp.uint8_t] imp_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:] marg = marg_arr
    cdef int[:] hops = hops_arr
    cdef unsigned char[:] imp = imp_arr
    cdef Py_ssize_t idx, i, p, e, j
    cdef double acc
    cdef int h
    cdef unsigned char bad
    for idx in range(n - 1, -1, -1):
        i = order[idx]
        if i == dest:
            continue
        acc = 0.0
        h = 0
        for p in range(out_ptr[i], out_ptr[i + 1]):
            e = out_eids[p]
            if active[e]:
                j = dst[e]
                acc += phi_e[e] * (coef_e[e] + marg[j])
                if hops[j] + 1 > h:
                    h = hops[j] + 1
        marg[i] = acc
        hops[i] = h
        bad = 0
        for p in range(out_ptr[i], out_ptr[i + 1]):
            e = out_eids[p]
            if active[e]:
                j = dst[e]
                if imp[j] or marg[j] >= acc:
                    bad = 1
                    break
        imp[i] = bad
    return marg_arr, hops_arr, imp_arr


def sweep_marginal_data(int[:] order, int[:] out_ptr, int[:] out_eids,
                        int[:] dst, double[:] phi_e, unsigned char[:] active,
                        double[:] coef_e, double[:] cpu_term, double[:] phi_cpu):
    cdef Py_ssize_t n = order.shape[0]
    cdef cnp.ndarray[cnp.float64_t] marg_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t] hops_arr = np.zeros(n, dtype=np.int32)
    cdef cnp.ndarray[cnp.uint8_t] imp_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:] marg = marg_arr
    cdef int[:] hops = hops_arr
    cdef unsigned char[:] imp = imp_arr
    cdef Py_ssize_t idx, i, p, e, j
    cdef double acc
    cdef int h
    cdef unsigned char bad
    for idx in range(n - 1, -1, -1):
        i = order[idx]
        acc = phi_cpu[i] * cpu_term[i] if phi_cpu[i] > 0.0 else 0.0
        h = 0
        for p in range(out_ptr[i], out_ptr[i + 1]):
            e = out_eids[p]
            if active[e]:
                j = dst[e]
                acc += phi_e[e] * (coef_e[e] + marg[j])
                if hops[j] + 1 > h:
                    h = hops[j] + 1
        marg[i] = acc
        hops[i] = h
        bad = 0
        for p in range(out_ptr[i], out_ptr[i + 1]):
            e = out_eids[p]
            if active[e]:
                j = dst[e]
                if imp[j] or marg[j] >= acc:
                    bad = 1
                    break
        imp[i] = bad
    return marg_arr, hops_arr, imp_arr


cdef int _qp_row_core(double* phi, double* delta, double* mdiag, Py_ssize_t k,
                      double beta, double gap_tol, double* v) nogil:
    """Solves the row QP into v; returns 0 on success."""
    cdef Py_ssize_t j, a, b, jmin, npos, s
    cdef double dmin, moved, amt, lam, d0min, total
    cdef double lo, hi, cand, acum, icum
    cdef unsigned char found
    if k == 1:
        v[0] = 1.0
        return 0
    npos = 0
    for j in range(k):
        if mdiag[j] > 0.0:
            npos += 1
    if npos == 0:
        dmin = delta[0]
        jmin = 0
        for j in range(1, k):
            if delta[j] < dmin:
                dmin = delta[j]
                jmin = j
        moved = 0.0
        for j in range(k):
            v[j] = phi[j]
            if j != jmin and delta[j] - dmin > gap_tol:
                if isinf(beta):
                    amt = phi[j]
                else:
                    amt = beta * (delta[j] - dmin)
                    if amt > phi[j]:
                        amt = phi[j]
                v[j] -= amt
                moved += amt
        v[jmin] += moved
        return 0

    # breakpoints for positively scaled coordinates, insertion-sorted
    cdef double brk_v[64]
    cdef double inv_v[64]
    cdef double con_v[64]
    cdef double* brk = brk_v
    cdef double* inv = inv_v
    cdef double* con = con_v
    cdef double key_b, key_i, key_c
    if npos > 64:
        return 1  # caller falls back to the Python implementation
    a = 0
    d0min = INFINITY
    for j in range(k):
        if mdiag[j] > 0.0:
            brk[a] = delta[j] - 2.0 * mdiag[j] * phi[j]
            inv[a] = 1.0 / (2.0 * mdiag[j])
            con[a] = phi[j] - delta[j] * inv[a]
            a += 1
        else:
            if delta[j] < d0min:
                d0min = delta[j]
    for a in range(1, npos):
        key_b = brk[a]
        key_i = inv[a]
        key_c = con[a]
        b = a - 1
        while b >= 0 and brk[b] > key_b:
            brk[b + 1] = brk[b]
            inv[b + 1] = inv[b]
            con[b + 1] = con[b]
            b -= 1
        brk[b + 1] = key_b
        inv[b + 1] = key_i
        con[b + 1] = key_c
    acum = 0.0
    icum = 0.0
    lam = 0.0
    found = 0
    for s in range(npos):
        acum += con[s]
        icum += inv[s]
        lo = brk[s]
        hi = brk[s + 1] if s + 1 < npos else INFINITY
        cand = (1.0 - acum) / icum
        if cand >= lo - 1e-300 and cand <= hi:
            lam = cand
            found = 1
            break
    if not found:
        lam = (1.0 - acum) / icum

    cdef double resid, nwin, vj
    if lam <= d0min:
        total = 0.0
        for j in range(k):
            if mdiag[j] > 0.0:
                vj = phi[j] + (lam - delta[j]) / (2.0 * mdiag[j])
                v[j] = vj if vj > 0.0 else 0.0
            else:
                v[j] = 0.0
            total += v[j]
    else:
        total = 0.0
        for j in range(k):
            if mdiag[j] > 0.0:
                vj = phi[j] + (d0min - delta[j]) / (2.0 * mdiag[j])
                v[j] = vj if vj > 0.0 else 0.0
                total += v[j]
            else:
                v[j] = 0.0
        resid = 1.0 - total
        if resid > 0.0:
            nwin = 0.0
            for j in range(k):
                if mdiag[j] <= 0.0 and delta[j] <= d0min:
                    nwin += 1.0
            for j in range(k):
                if mdiag[j] <= 0.0 and delta[j] <= d0min:
                    v[j] = resid / nwin
            total = 1.0
    if total <= 0.0:
        dmin = delta[0]
        jmin = 0
        for j in range(1, k):
            if delta[j] < dmin:
                dmin = delta[j]
                jmin = j
        for j in range(k):
            v[j] = 0.0
        v[jmin] = 1.0
        return 0
    for j in range(k):
        v[j] /= total
    return 0


def qp_row(double[:] phi, double[:] delta, double[:] mdiag, double beta,
           double gap_tol):
    cdef Py_ssize_t k = phi.shape[0]
    cdef cnp.ndarray[cnp.float64_t] out = np.empty(k, dtype=np.float64)
    cdef double[:] v = out
    cdef cnp.ndarray[cnp.float64_t] pc = np.ascontiguousarray(phi)
    cdef cnp.ndarray[cnp.float64_t] dc = np.ascontiguousarray(delta)
    cdef cnp.ndarray[cnp.float64_t] mc = np.ascontiguousarray(mdiag)
    cdef int rc = _qp_row_core(<double*> pc.data, <double*> dc.data,
                               <double*> mc.data, k, beta, gap_tol,
                               <double*> out.data)
    if rc != 0:
        from . import _py
        return _py.qp_row(np.asarray(phi), np.asarray(delta),
                          np.asarray(mdiag), beta, gap_tol)
    return out


def update_rows(int[:] out_ptr, int[:] out_eids, int[:] dst,
                double[:] phi_e, phi_cpu_obj,
                double[:] delta_e, double[:] delta_cpu,
                double[:] m_e, double[:] m_cpu,
                unsigned char[:] usable_e, unsigned char[:] usable_cpu,
                double beta, double gap_tol, int skip_node, int gp_mode):
    cdef Py_ssize_t n = out_ptr.shape[0] - 1
    cdef bint has_cpu = phi_cpu_obj is not None
    cdef Py_ssize_t maxrow = 0
    cdef Py_ssize_t ii
    for ii in range(n):
        if out_ptr[ii + 1] - out_ptr[ii] > maxrow:
            maxrow = out_ptr[ii + 1] - out_ptr[ii]
    if maxrow + 1 > 64:
        from . import _py
        return _py.update_rows(
            np.asarray(out_ptr), np.asarray(out_eids), np.asarray(dst),
            np.asarray(phi_e),
            np.asarray(phi_cpu_obj) if has_cpu else None,
            np.asarray(delta_e), np.asarray(delta_cpu),
            np.asarray(m_e), np.asarray(m_cpu),
            np.asarray(usable_e), np.asarray(usable_cpu),
            beta, gap_tol, skip_node, gp_mode)
    cdef double[:] phi_cpu
    if has_cpu:
        phi_cpu = phi_cpu_obj
    cdef double phi_b[65]
    cdef double delta_b[65]
    cdef double m_b[65]
    cdef double v_b[65]
    cdef int eid_b[65]
    cdef Py_ssize_t i, p, e, k, a, jmin
    cdef bint use_cpu
    cdef double mass, total, dmin
    cdef int rc
    for i in range(n):
        if i == skip_node:
            continue
        k = 0
        use_cpu = False
        if has_cpu and (usable_cpu[i] or phi_cpu[i] > 0.0):
            use_cpu = True
            phi_b[0] = phi_cpu[i]
            delta_b[0] = delta_cpu[i]
            m_b[0] = m_cpu[i]
            k = 1
        for p in range(out_ptr[i], out_ptr[i + 1]):
            e = out_eids[p]
            if usable_e[e] or phi_e[e] > 0.0:
                phi_b[k] = phi_e[e]
                delta_b[k] = delta_e[e]
                m_b[k] = m_e[e]
                eid_b[k] = <int> e
                k += 1
        if k == 0:
            mass = 0.0
            for p in range(out_ptr[i], out_ptr[i + 1]):
                mass += phi_e[out_eids[p]]
            if has_cpu:
                mass += phi_cpu[i]
            if mass > 1e-9:
                return <int> i
            continue
        if gp_mode:
            dmin = delta_b[0]
            jmin = 0
            for a in range(1, k):
                if delta_b[a] < dmin:
                    dmin = delta_b[a]
                    jmin = a
            m_b[jmin] = 0.0
        if k == 1:
            v_b[0] = 1.0
        else:
            total = 0.0
            for a in range(k):
                total += phi_b[a]
            if total <= 0.0:
                dmin = delta_b[0]
                jmin = 0
                for a in range(1, k):
                    if delta_b[a] < dmin:
                        dmin = delta_b[a]
                        jmin = a
                for a in range(k):
                    v_b[a] = 0.0
                v_b[jmin] = 1.0
            else:
                for a in range(k):
                    phi_b[a] /= total
                rc = _qp_row_core(phi_b, delta_b, m_b, k, beta, gap_tol, v_b)
        a = 0
        if use_cpu:
            phi_cpu[i] = v_b[0]
            a = 1
        for p in range(a, k):
            phi_e[eid_b[p]] = v_b[p]
    return -1
