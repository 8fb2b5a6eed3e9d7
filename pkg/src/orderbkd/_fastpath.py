"""Optional numba kernel for the reposition search over dense LM tables.

Only engaged for small vocabularies (see ``LanguageModel.dense_tables``); the
pure-Python search in :mod:`orderbkd.triggers` is the reference behavior and
the fallback when numba is unavailable.

To keep per-call overhead low the sentence crosses the boundary as three
packed integers: vocabulary ids in base ``v`` (token i at digit i), a
string-identity signature in base 16, and a candidate-position bitmask.
"""

from __future__ import annotations

import math

try:
    import numpy as np
    from numba import njit
except ImportError:  # pragma: no cover - numba is an optional accelerator
    njit = None

# Signature digits are 4 bits, so packed sentences cap at 15 tokens; longer
# sentences take the general path.
MAX_PACKED_LEN = 15

if njit is not None:

    @njit(cache=True)
    def _search(ids_code, sig_code, cand_bits, n, table, v, order, bos, eos):
        ids = np.empty(n, np.int64)
        sig = np.empty(n, np.int64)
        c = ids_code
        s = sig_code
        for i in range(n):
            ids[i] = c % v
            c //= v
            sig[i] = s & 15
            s >>= 4
        mod = 1
        for _ in range(order - 2):
            mod *= v
        start_ctx = 0
        for _ in range(order - 1):
            start_ctx = start_ctx * v + bos
        best_ppl = np.inf
        best_src = -1
        best_dst = -1
        var = np.empty(n, np.int64)
        m = float(n + 1)
        for src in range(n):
            if not (cand_bits >> src) & 1:
                continue
            for dst in range(n):
                if dst == src:
                    continue
                # The move is an identity exactly when every token between
                # source and destination (inclusive) is the same string.
                lo, hi = (src, dst) if src < dst else (dst, src)
                same = True
                for i in range(lo, hi):
                    if sig[i] != sig[i + 1]:
                        same = False
                        break
                if same:
                    continue
                k = 0
                for i in range(n):
                    if i != src:
                        var[k] = ids[i]
                        k += 1
                for j in range(n - 1, dst, -1):
                    var[j] = var[j - 1]
                var[dst] = ids[src]
                ctx = start_ctx
                total = 0.0
                for i in range(n):
                    w = var[i]
                    total += table[ctx * v + w]
                    if order >= 2:
                        ctx = (ctx % mod) * v + w
                total += table[ctx * v + eos]
                ppl = math.exp(-total / m)
                if ppl < best_ppl:
                    best_ppl = ppl
                    best_src = src
                    best_dst = dst
        return best_ppl, best_src, best_dst

    search_kernel = _search
else:  # pragma: no cover
    search_kernel = None
