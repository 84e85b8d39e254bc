"""Backend selection for the Dykstra kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``PROJECTNET_PURE=1`` to force the fallback (used by the benchmark and the
backend-agreement tests).
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("PROJECTNET_PURE", "") != "1":
    try:
        from . import _ckernels

        _impl = _ckernels
        BACKEND = "cython"
    except ImportError:  # extension not built
        pass


def get_backend(name=None):
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def _chunks(B, threads):
    n = max(1, min(int(threads), B))
    edges = np.linspace(0, B, n + 1).astype(int)
    return [(edges[i], edges[i + 1]) for i in range(n) if edges[i + 1] > edges[i]]


def forward(pk, W, rhs=None, k=10, record=False, tol=0.0, threads=1, backend=None):
    impl = get_backend(backend)
    W = np.ascontiguousarray(W, dtype=float)
    if threads <= 1 or W.shape[0] < 2 or impl is _kernels_py:
        return impl.dykstra_forward(pk, W, rhs, int(k), bool(record), float(tol))
    parts = _chunks(W.shape[0], threads)

    def run(se):
        s, e = se
        r = None if rhs is None else rhs[s:e]
        return impl.dykstra_forward(pk, W[s:e], r, int(k), bool(record), float(tol))

    with ThreadPoolExecutor(len(parts)) as ex:
        res = list(ex.map(run, parts))
    x = np.concatenate([r[0] for r in res])
    masks = np.concatenate([r[1] for r in res]) if record else None
    return x, masks, max(r[2] for r in res)


def backward(pk, masks, G, k, need_rhs=False, threads=1, backend=None):
    impl = get_backend(backend)
    G = np.ascontiguousarray(G, dtype=float)
    if threads <= 1 or G.shape[0] < 2 or impl is _kernels_py:
        return impl.dykstra_backward(pk, masks, G, int(k), bool(need_rhs))
    parts = _chunks(G.shape[0], threads)

    def run(se):
        s, e = se
        return impl.dykstra_backward(pk, masks[s:e], G[s:e], int(k), bool(need_rhs))

    with ThreadPoolExecutor(len(parts)) as ex:
        res = list(ex.map(run, parts))
    gx = np.concatenate([r[0] for r in res])
    grhs = np.concatenate([r[1] for r in res]) if need_rhs else None
    return gx, grhs
