"""Pure numpy kernels. Reference implementation and fallback for ``_ckernels``.

Both modules expose the same three functions with identical semantics:

``sweep(state, mats, shapes)``
    Push a batch of tensors through a chain of MPO cores.  ``state`` is a
    C-contiguous ``(BA, R*I*rest)`` array laid out as ``[ba, r, i, rest]``.
    Step ``t`` uses ``mats[t]``, the core reshaped to ``(R*I, J*Rn)``, and
    ``shapes[t] = (R, I, J, Rn)``.  It contracts ``r`` and ``i`` and emits
    ``j`` and ``rn`` so the new layout is ``[ba, j, rn, rest]``; ``j`` is then
    folded into the leading axis.  Returns ``(BA0, size / BA0)``.

``sigmoid(x)``
    Overflow-free logistic function.

``bernoulli(probs, uniforms)``
    ``1.0`` where ``uniforms < probs`` else ``0.0``.
"""
import numpy as np


def sweep(state, mats, shapes):
    state = np.ascontiguousarray(state, dtype=np.float64)
    lead = state.shape[0]
    ba = lead
    for mat, (r, i, j, rn) in zip(mats, shapes):
        ri = r * i
        rest = state.size // (ba * ri)
        if rest == 1:
            out = state.reshape(ba, ri) @ mat
        else:
            out = np.matmul(mat.T, state.reshape(ba, ri, rest))
        ba *= j
        state = out.reshape(ba, -1)
    return state.reshape(lead, -1)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bernoulli(probs, uniforms):
    return (np.asarray(uniforms) < np.asarray(probs)).astype(np.float64)
