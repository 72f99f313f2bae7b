"""Hot sequence kernels with a numba fast path and a pure-numpy fallback.

The GRU recurrence is the one loop in the package that cannot be expressed as
a handful of large array operations: each timestep depends on the previous
hidden state. Both directions of every BiGRU funnel through the two kernels
here, so they are compiled with numba when available.

Backend selection, via the COREFREAD_KERNELS environment variable:
  auto   (default) use numba when importable, else numpy
  numba  require numba, fail loudly if missing
  numpy  force the pure-numpy path

``corefread bench`` times both paths on the same inputs.
"""

from __future__ import annotations

import os

import numpy as np

ENV_VAR = "COREFREAD_KERNELS"


def _gru_seq_forward(xp, u, b_hn, h0, mask, reverse):
    """Run a full GRU pass over a padded batch of sequences.

    xp      (B, T, 3H) input projections, gate order [update, reset, candidate],
            input biases already folded in
    u       (H, 3H) recurrent weights, same gate order
    b_hn    (H,) recurrent bias of the candidate term (multiplied by the reset
            gate, so it cannot be folded into xp)
    h0      (B, H) initial state
    mask    (B, T) 1.0 at real positions, 0.0 at padding; masked steps carry
            the previous state through unchanged, which keeps padded batches
            bit-compatible with unpadded ones
    reverse iterate t from T-1 down to 0 (the backward direction of a BiGRU)

    Returns (out, z, r, n, hn): the per-step hidden states plus the gate
    activations the backward pass needs.
    """
    B, T, H3 = xp.shape
    H = H3 // 3
    out = np.empty((B, T, H))
    zc = np.empty((B, T, H))
    rc = np.empty((B, T, H))
    nc = np.empty((B, T, H))
    hnc = np.empty((B, T, H))
    h = h0.copy()
    for i in range(T):
        t = T - 1 - i if reverse else i
        hu = np.dot(h, u)
        z = 1.0 / (1.0 + np.exp(-(xp[:, t, 0:H] + hu[:, 0:H])))
        r = 1.0 / (1.0 + np.exp(-(xp[:, t, H : 2 * H] + hu[:, H : 2 * H])))
        hn = hu[:, 2 * H : 3 * H] + b_hn
        n = np.tanh(xp[:, t, 2 * H : 3 * H] + r * hn)
        h_new = (1.0 - z) * n + z * h
        m = mask[:, t : t + 1]
        h = m * h_new + (1.0 - m) * h
        out[:, t] = h
        zc[:, t] = z
        rc[:, t] = r
        nc[:, t] = n
        hnc[:, t] = hn
    return out, zc, rc, nc, hnc


def _gru_seq_backward(g_out, xp, u, mask, out, h0, zc, rc, nc, hnc, reverse):
    """Backpropagate through _gru_seq_forward.

    g_out is the gradient of the loss with respect to ``out``. Returns
    (dxp, du, db_hn, dh0). The derivation mirrors the forward step exactly;
    masked steps route the incoming gradient straight through to the previous
    state and contribute nothing to the parameters.
    """
    B, T, H3 = xp.shape
    H = H3 // 3
    dxp = np.zeros_like(xp)
    du = np.zeros_like(u)
    db = np.zeros(H)
    dh = np.zeros((B, H))
    dhu = np.empty((B, H3))
    for i in range(T):
        t = i if reverse else T - 1 - i
        if reverse:
            first = t == T - 1
            prev_t = t + 1
        else:
            first = t == 0
            prev_t = t - 1
        if first:
            h_prev = h0.copy()
        else:
            h_prev = np.ascontiguousarray(out[:, prev_t])
        dh = dh + g_out[:, t]
        m = mask[:, t : t + 1]
        z = zc[:, t]
        r = rc[:, t]
        n = nc[:, t]
        hn = hnc[:, t]
        dh_new = dh * m
        dh_carry = dh * (1.0 - m)
        dn = dh_new * (1.0 - z)
        dz = dh_new * (h_prev - n)
        dh_prev = dh_new * z
        dnpre = dn * (1.0 - n * n)
        dr = dnpre * hn
        dhn = dnpre * r
        dzpre = dz * z * (1.0 - z)
        drpre = dr * r * (1.0 - r)
        dxp[:, t, 0:H] = dzpre
        dxp[:, t, H : 2 * H] = drpre
        dxp[:, t, 2 * H : 3 * H] = dnpre
        for b in range(B):
            db += dhn[b]
        dhu[:, 0:H] = dzpre
        dhu[:, H : 2 * H] = drpre
        dhu[:, 2 * H : 3 * H] = dhn
        du += np.dot(h_prev.T, dhu)
        dh = dh_carry + dh_prev + np.dot(dhu, u.T)
    return dxp, du, db, dh


def _resolve_backend():
    choice = os.environ.get(ENV_VAR, "auto").lower()
    if choice not in {"auto", "numba", "numpy"}:
        raise ValueError(
            f"{ENV_VAR} must be one of auto|numba|numpy, got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise RuntimeError(f"{ENV_VAR}=numba but numba is not importable")
        return "numpy"
    return "numba"


def _compile(fn):
    from numba import njit

    return njit(cache=True, fastmath=False)(fn)


BACKEND = _resolve_backend()

if BACKEND == "numba":
    gru_seq_forward = _compile(_gru_seq_forward)
    gru_seq_backward = _compile(_gru_seq_backward)
else:
    gru_seq_forward = _gru_seq_forward
    gru_seq_backward = _gru_seq_backward


def implementations():
    """Both backend variants of each kernel, for benchmarks and parity tests.

    Returns {"numpy": {...}, "numba": {...}}; the numba entry is absent when
    numba cannot be imported.
    """
    impls = {
        "numpy": {
            "gru_seq_forward": _gru_seq_forward,
            "gru_seq_backward": _gru_seq_backward,
        }
    }
    try:
        impls["numba"] = {
            "gru_seq_forward": _compile(_gru_seq_forward),
            "gru_seq_backward": _compile(_gru_seq_backward),
        }
    except ImportError:
        pass
    return impls
