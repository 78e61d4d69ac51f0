"""Pure numpy GRU sequence kernels.

Gate layout along the last axis of ``W``/``U``/``b`` is ``[update | reset | candidate]``.
The candidate uses ``U_h (r * h)``.  Each step is masked: where ``mask`` is 0
the previous state is carried through unchanged.
"""
import numpy as np


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def gru_seq_forward(xw, mask, h0, U):
    """Run the recurrence given precomputed input projections.

    xw : (T, B, 3H)  ``x_t @ W + b`` for every step
    mask : (T, B)
    h0 : (B, H)
    U : (H, 3H)

    Returns ``hs`` (T+1, B, H) with ``hs[0] = h0`` and the gate caches z, r, c.
    """
    T, B, H3 = xw.shape
    H = H3 // 3
    hs = np.empty((T + 1, B, H))
    z = np.empty((T, B, H))
    r = np.empty((T, B, H))
    c = np.empty((T, B, H))
    hs[0] = h0
    U_zr = U[:, :2 * H]
    U_h = U[:, 2 * H:]
    for t in range(T):
        h = hs[t]
        gzr = xw[t, :, :2 * H] + h @ U_zr
        zt = _sigmoid(gzr[:, :H])
        rt = _sigmoid(gzr[:, H:])
        ct = np.tanh(xw[t, :, 2 * H:] + (rt * h) @ U_h)
        m = mask[t][:, None]
        hs[t + 1] = h + m * (zt * (ct - h))
        z[t], r[t], c[t] = zt, rt, ct
    return hs, z, r, c


def gru_seq_backward(dhs, mask, hs, z, r, c, U):
    """Backpropagate through the recurrence.

    dhs : (T+1, B, H)  external gradient on every entry of ``hs``

    Returns ``dxw`` (T, B, 3H), ``dh0`` (B, H) and ``dU`` (H, 3H).
    """
    T, B, H = z.shape
    U_zr = U[:, :2 * H]
    U_h = U[:, 2 * H:]
    dxw = np.empty((T, B, 3 * H))
    dU = np.zeros_like(U)
    dh = dhs[T].copy()
    for t in range(T - 1, -1, -1):
        h = hs[t]
        m = mask[t][:, None]
        zt, rt, ct = z[t], r[t], c[t]
        dhp = m * dh
        dprev = dh - dhp * zt
        dac = dhp * zt * (1.0 - ct * ct)
        daz = dhp * (ct - h) * zt * (1.0 - zt)
        rh = rt * h
        drh = dac @ U_h.T
        dar = drh * h * rt * (1.0 - rt)
        dprev += drh * rt
        dzr = np.concatenate([daz, dar], axis=1)
        dprev += dzr @ U_zr.T
        dU[:, :2 * H] += h.T @ dzr
        dU[:, 2 * H:] += rh.T @ dac
        dxw[t, :, :2 * H] = dzr
        dxw[t, :, 2 * H:] = dac
        dh = dprev + dhs[t]
    return dxw, dh, dU
