# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled mixing-block reductions (see ``_kernels_py`` for the reference)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def mixing_backward(const double[:, ::1] mv, const double[:, ::1] sv,
                    const double[:, ::1] vv,
                    const double[:, ::1] mw, const double[:, ::1] vw,
                    const double[:, ::1] mu, const double[:, ::1] lam_u,
                    const double[:, ::1] s_m, const double[:, ::1] s_v,
                    double eps, bint want_v):
    cdef Py_ssize_t n = mv.shape[0], J = mv.shape[1], I = mw.shape[0]
    cdef Py_ssize_t a, b, c
    cdef double vu, base_v, base_r, m_v, m_w, d, r, inv_d
    cdef long skip_w = 0, skip_v = 0
    lam_w_arr = np.zeros((I, J))
    h_w_arr = np.zeros((I, J))
    lo_v_arr = np.zeros((n, J)) if want_v else np.zeros((0, 0))
    cdef double[:, ::1] lam_w = lam_w_arr
    cdef double[:, ::1] h_w = h_w_arr
    cdef double[:, ::1] lo_v = lo_v_arr
    with nogil:
        for a in range(n):
            for b in range(I):
                if lam_u[a, b] <= 0:
                    continue
                vu = 1.0 / lam_u[a, b]
                base_v = vu + s_v[a, b]
                base_r = mu[a, b] - s_m[a, b]
                for c in range(J):
                    m_v = mv[a, c]
                    m_w = mw[b, c]
                    d = base_v - (vw[b, c] * sv[a, c] + m_w * m_w * vv[a, c])
                    if d < 1e-300:
                        d = 1e-300
                    inv_d = 1.0 / d
                    r = base_r + m_w * m_v
                    if fabs(m_v) > eps:
                        lam_w[b, c] += m_v * m_v * inv_d
                        h_w[b, c] += m_v * r * inv_d
                    else:
                        skip_w += 1
                    if want_v:
                        if fabs(m_w) > eps:
                            lo_v[a, c] += m_w * r * inv_d - 0.5 * m_w * m_w * inv_d
                        else:
                            skip_v += 1
    return lam_w_arr, h_w_arr, skip_w, (lo_v_arr if want_v else None), skip_v
