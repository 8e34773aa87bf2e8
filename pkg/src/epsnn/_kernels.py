"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``EPSNN_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py.mixing_backward

if os.environ.get("EPSNN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _mixing_ext

        _impl = _mixing_ext.mixing_backward
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        pass

_threads = 1


def set_threads(n: int):
    global _threads
    _threads = max(1, int(n))


def get_threads() -> int:
    return _threads


def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def mixing_backward(mv, sv, vv, mw, vw, mu, lam_u, s_m, s_v, eps, want_v, impl=None):
    """Summed local AEP messages for one mixing block.

    Samples are split into contiguous chunks when more than one thread is
    configured; partial sums are reduced in chunk order so results do not
    depend on scheduling.
    """
    fn = impl or _impl
    args = [_c(mv), _c(sv), _c(vv), _c(mw), _c(vw), _c(np.nan_to_num(mu)), _c(lam_u), _c(s_m),
            _c(s_v)]
    n = args[0].shape[0]
    if _threads == 1 or n < 2 * _threads:
        return fn(*args, float(eps), bool(want_v))
    bounds = np.linspace(0, n, _threads + 1).astype(int)

    def run(k):
        a, b = bounds[k], bounds[k + 1]
        sub = [x[a:b] if x.shape[0] == n and idx not in (3, 4) else x
               for idx, x in enumerate(args)]
        return fn(*[_c(s) for s in sub], float(eps), bool(want_v))

    with ThreadPoolExecutor(max_workers=_threads) as ex:
        parts = list(ex.map(run, range(_threads)))
    lam_w = parts[0][0].copy()
    h_w = parts[0][1].copy()
    for p in parts[1:]:
        lam_w += p[0]
        h_w += p[1]
    skip_w = sum(p[2] for p in parts)
    lo_v = np.concatenate([p[3] for p in parts]) if want_v else None
    skip_v = sum(p[4] for p in parts)
    return lam_w, h_w, skip_w, lo_v, skip_v
