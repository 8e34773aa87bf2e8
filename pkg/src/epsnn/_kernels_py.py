"""Pure-numpy fallback for the mixing-block reductions.

Mirrors ``_mixing_ext.pyx`` exactly; used when the compiled extension is not
available or ``EPSNN_PURE_PYTHON=1``.  Work is chunked over samples so the
``n x i x j`` temporaries stay bounded.
"""
import numpy as np

_CHUNK_ELEMS = 4_000_000


def mixing_backward(mv, sv, vv, mw, vw, mu, lam_u, s_m, s_v, eps, want_v):
    """Sum the local AEP messages of one mixing block.

    Parameters are cavity moments: ``mv, sv, vv`` (n, j) spike mean, second
    moment and variance, ``mw, vw`` (i, j) weight mean and variance, ``mu, lam_u`` (n, i)
    potential mean / precision, and ``s_m, s_v`` (n, i) the full-row sums of
    means and variances.

    Returns ``(lam_w, h_w, n_w_skip, lo_v, n_v_skip)`` where ``lam_w, h_w``
    (i, j) are the summed Gaussian weight messages and ``lo_v`` (n, j) the
    summed spike log-odds messages (``None`` if ``want_v`` is false).
    """
    n, j = mv.shape
    i = mw.shape[0]
    lam_w = np.zeros((i, j))
    h_w = np.zeros((i, j))
    lo_v = np.zeros((n, j)) if want_v else None
    skip_w = 0
    skip_v = 0
    step = max(1, _CHUNK_ELEMS // max(1, i * j))
    for a in range(0, n, step):
        b = min(n, a + step)
        lu = lam_u[a:b]
        active = lu > 0  # (c, i)
        with np.errstate(divide="ignore", invalid="ignore"):
            vu = np.where(active, 1.0 / np.where(active, lu, 1.0), 0.0)
        mvc = mv[a:b, None, :]
        c = vw[None] * sv[a:b, None, :] + mw[None] ** 2 * vv[a:b, None, :]
        d = (vu + s_v[a:b])[:, :, None] - c
        d = np.maximum(d, 1e-300)
        r = (mu[a:b] - s_m[a:b])[:, :, None] + mw[None] * mvc
        r = np.where(active[:, :, None], r, 0.0)
        inv_d = np.where(active[:, :, None], 1.0 / d, 0.0)
        use_w = (np.abs(mvc) > eps) & active[:, :, None]
        lam_w += np.where(use_w, mvc ** 2 * inv_d, 0.0).sum(0)
        h_w += np.where(use_w, mvc * r * inv_d, 0.0).sum(0)
        skip_w += int(np.count_nonzero(active[:, :, None] & ~use_w))
        if want_v:
            mwb = mw[None]
            use_v = (np.abs(mwb) > eps) & active[:, :, None]
            lam_v = mwb ** 2 * inv_d
            h_v = mwb * r * inv_d
            lo_v[a:b] += np.where(use_v, h_v - 0.5 * lam_v, 0.0).sum(1)
            skip_v += int(np.count_nonzero(active[:, :, None] & ~use_v))
    return lam_w, h_w, skip_w, lo_v, skip_v
