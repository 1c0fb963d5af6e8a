"""Hot loops of the encoder-decoder: forward, exact backward, sampling, beam.

Wiring (V vocab, D embedding, H hidden):

* encoder: source ids framed as ``x_1..x_n EOS``; embeddings feed a forward
  and a backward GRU; annotation ``h_i = [f_i; b_i]`` (2H).
* decoder init: ``s_0 = tanh(W_init [f_last; b_first] + b_init)``.
* decoder step t: GRU over ``[emb(y_{t-1}); o_{t-1}]`` (input feeding,
  ``y_0 = BOS``, ``o_0 = 0``); bilinear attention ``score_i = s_t . W_att h_i``;
  context ``c_t = sum_i a_i h_i``; ``o_t = tanh(W_comb [s_t; c_t] + b_comb)``;
  ``logits_t = W_out o_t + b_out``.

All parameters live in one flat float64 vector; ``unpack`` returns views.
Every function here compiles under numba when enabled and otherwise runs as
plain numpy.
"""
import numpy as np

from .._jit import jit

PAD, BOS, EOS, UNK = 0, 1, 2, 3

PARAM_NAMES = (
    "enc_emb",
    "enc_fw_wx", "enc_fw_wh", "enc_fw_bx", "enc_fw_bh",
    "enc_bw_wx", "enc_bw_wh", "enc_bw_bx", "enc_bw_bh",
    "init_w", "init_b",
    "dec_emb",
    "dec_wx", "dec_wh", "dec_bx", "dec_bh",
    "att_w",
    "comb_w", "comb_b",
    "out_w", "out_b",
)


def param_shapes(V, D, H):
    return {
        "enc_emb": (V, D),
        "enc_fw_wx": (3 * H, D), "enc_fw_wh": (3 * H, H),
        "enc_fw_bx": (3 * H,), "enc_fw_bh": (3 * H,),
        "enc_bw_wx": (3 * H, D), "enc_bw_wh": (3 * H, H),
        "enc_bw_bx": (3 * H,), "enc_bw_bh": (3 * H,),
        "init_w": (H, 2 * H), "init_b": (H,),
        "dec_emb": (V, D),
        "dec_wx": (3 * H, D + H), "dec_wh": (3 * H, H),
        "dec_bx": (3 * H,), "dec_bh": (3 * H,),
        "att_w": (H, 2 * H),
        "comb_w": (H, 3 * H), "comb_b": (H,),
        "out_w": (V, H), "out_b": (V,),
    }


@jit
def _mat(flat, o, a, b):
    return flat[o:o + a * b].reshape((a, b)), o + a * b


@jit
def _vec(flat, o, a):
    return flat[o:o + a], o + a


@jit
def unpack(flat, V, D, H):
    o = 0
    enc_emb, o = _mat(flat, o, V, D)
    fw_wx, o = _mat(flat, o, 3 * H, D)
    fw_wh, o = _mat(flat, o, 3 * H, H)
    fw_bx, o = _vec(flat, o, 3 * H)
    fw_bh, o = _vec(flat, o, 3 * H)
    bw_wx, o = _mat(flat, o, 3 * H, D)
    bw_wh, o = _mat(flat, o, 3 * H, H)
    bw_bx, o = _vec(flat, o, 3 * H)
    bw_bh, o = _vec(flat, o, 3 * H)
    init_w, o = _mat(flat, o, H, 2 * H)
    init_b, o = _vec(flat, o, H)
    dec_emb, o = _mat(flat, o, V, D)
    dec_wx, o = _mat(flat, o, 3 * H, D + H)
    dec_wh, o = _mat(flat, o, 3 * H, H)
    dec_bx, o = _vec(flat, o, 3 * H)
    dec_bh, o = _vec(flat, o, 3 * H)
    att_w, o = _mat(flat, o, H, 2 * H)
    comb_w, o = _mat(flat, o, H, 3 * H)
    comb_b, o = _vec(flat, o, H)
    out_w, o = _mat(flat, o, V, H)
    out_b, o = _vec(flat, o, V)
    return (enc_emb, fw_wx, fw_wh, fw_bx, fw_bh, bw_wx, bw_wh, bw_bx, bw_bh,
            init_w, init_b, dec_emb, dec_wx, dec_wh, dec_bx, dec_bh,
            att_w, comb_w, comb_b, out_w, out_b)


# --------------------------------------------------------------------------
# small building blocks


@jit
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@jit
def _gru(wx, wh, bx, bh, h, x, r, z, n, hn, out):
    H = h.shape[0]
    gx = np.dot(wx, x) + bx
    gh = np.dot(wh, h) + bh
    for k in range(H):
        r[k] = _sigmoid(gx[k] + gh[k])
        z[k] = _sigmoid(gx[H + k] + gh[H + k])
        hn[k] = gh[2 * H + k]
        n[k] = np.tanh(gx[2 * H + k] + r[k] * hn[k])
        out[k] = (1.0 - z[k]) * n[k] + z[k] * h[k]


@jit
def _add_outer(dw, g, x):
    for i in range(g.shape[0]):
        gi = g[i]
        if gi != 0.0:
            for j in range(x.shape[0]):
                dw[i, j] += gi * x[j]


@jit
def _gru_back(wx, wh, h, x, r, z, n, hn, dout, dwx, dwh, dbx, dbh):
    """Backprop one GRU step; returns (d h_prev, d x)."""
    H = h.shape[0]
    gx = np.empty(3 * H)
    gh = np.empty(3 * H)
    for k in range(H):
        dn = dout[k] * (1.0 - z[k])
        dz = dout[k] * (h[k] - n[k])
        dnp = dn * (1.0 - n[k] * n[k])
        drp = dnp * hn[k] * r[k] * (1.0 - r[k])
        dzp = dz * z[k] * (1.0 - z[k])
        gx[k] = drp
        gx[H + k] = dzp
        gx[2 * H + k] = dnp
        gh[k] = drp
        gh[H + k] = dzp
        gh[2 * H + k] = dnp * r[k]
    _add_outer(dwx, gx, x)
    _add_outer(dwh, gh, h)
    dbx += gx
    dbh += gh
    dx = np.dot(wx.T, gx)
    dh = np.dot(wh.T, gh) + dout * z
    return dh, dx


@jit
def _log_softmax(logits, temp, out):
    """Fill ``out`` with softmax(logits / temp); return log of the normaliser."""
    m = logits.max() / temp
    s = 0.0
    for v in range(logits.shape[0]):
        out[v] = np.exp(logits[v] / temp - m)
        s += out[v]
    out /= s
    return m + np.log(s)


# --------------------------------------------------------------------------
# encoder


@jit
def _encode(P, src, H):
    """Run both encoder GRUs. ``src`` already ends with EOS."""
    enc_emb = P[0]
    fw_wx, fw_wh, fw_bx, fw_bh = P[1], P[2], P[3], P[4]
    bw_wx, bw_wh, bw_bx, bw_bh = P[5], P[6], P[7], P[8]
    init_w, init_b = P[9], P[10]
    n = src.shape[0]
    F = np.zeros((n + 1, H))
    B = np.zeros((n + 1, H))
    fr = np.empty((n, H))
    fz = np.empty((n, H))
    fn = np.empty((n, H))
    fhn = np.empty((n, H))
    br = np.empty((n, H))
    bz = np.empty((n, H))
    bn = np.empty((n, H))
    bhn = np.empty((n, H))
    for i in range(n):
        _gru(fw_wx, fw_wh, fw_bx, fw_bh, F[i], enc_emb[src[i]],
             fr[i], fz[i], fn[i], fhn[i], F[i + 1])
    for i in range(n - 1, -1, -1):
        _gru(bw_wx, bw_wh, bw_bx, bw_bh, B[i + 1], enc_emb[src[i]],
             br[i], bz[i], bn[i], bhn[i], B[i])
    ann = np.empty((n, 2 * H))
    for i in range(n):
        ann[i, :H] = F[i + 1]
        ann[i, H:] = B[i]
    g = np.empty(2 * H)
    g[:H] = F[n]
    g[H:] = B[0]
    s0 = np.tanh(np.dot(init_w, g) + init_b)
    att_w = P[16]
    keys = np.dot(ann, att_w.T)
    return F, B, fr, fz, fn, fhn, br, bz, bn, bhn, ann, keys, g, s0


@jit
def _dec_step(P, s, o_prev, y_in, ann, keys, D, H,
              u, s_new, r, z, n, hn, a, c, o, logits):
    """One decoder step; fills the per-step cache rows passed in."""
    dec_emb = P[11]
    dec_wx, dec_wh, dec_bx, dec_bh = P[12], P[13], P[14], P[15]
    comb_w, comb_b, out_w, out_b = P[17], P[18], P[19], P[20]
    u[:D] = dec_emb[y_in]
    u[D:] = o_prev
    _gru(dec_wx, dec_wh, dec_bx, dec_bh, s, u, r, z, n, hn, s_new)
    sc = np.dot(keys, s_new)
    mx = sc.max()
    tot = 0.0
    for i in range(sc.shape[0]):
        a[i] = np.exp(sc[i] - mx)
        tot += a[i]
    a /= tot
    c[:] = np.dot(a, ann)
    sc_in = np.empty(3 * H)
    sc_in[:H] = s_new
    sc_in[H:] = c
    o[:] = np.tanh(np.dot(comb_w, sc_in) + comb_b)
    logits[:] = np.dot(out_w, o) + out_b


# --------------------------------------------------------------------------
# teacher-forced log-probability and its gradient


@jit
def pair_logprob(flat, V, D, H, src, tgt, temp, weight, grad, want_grad):
    """ln P(tgt | src) under softmax(logits / temp), EOS term included.

    ``src`` and ``tgt`` must already end with EOS. If ``want_grad`` the
    gradient of ``weight * ln P`` is added into the flat array ``grad``.
    """
    P = unpack(flat, V, D, H)
    F, B, fr, fz, fn, fhn, br, bz, bn, bhn, ann, keys, g, s0 = _encode(P, src, H)
    n = src.shape[0]
    m = tgt.shape[0]
    S = np.empty((m + 1, H))
    S[0] = s0
    U = np.empty((m, D + H))
    R = np.empty((m, H))
    Z = np.empty((m, H))
    N = np.empty((m, H))
    HN = np.empty((m, H))
    A = np.empty((m, n))
    C = np.empty((m, 2 * H))
    O = np.zeros((m + 1, H))  # O[t + 1] is the output of step t
    PR = np.empty((m, V))
    logits = np.empty(V)
    total = 0.0
    for t in range(m):
        y_in = BOS if t == 0 else tgt[t - 1]
        _dec_step(P, S[t], O[t], y_in, ann, keys, D, H,
                  U[t], S[t + 1], R[t], Z[t], N[t], HN[t], A[t], C[t], O[t + 1], logits)
        lse = _log_softmax(logits, temp, PR[t])
        total += logits[tgt[t]] / temp - lse
    if not want_grad:
        return total

    G = unpack(grad, V, D, H)
    (enc_emb, fw_wx, fw_wh, fw_bx, fw_bh, bw_wx, bw_wh, bw_bx, bw_bh,
     init_w, init_b, dec_emb, dec_wx, dec_wh, dec_bx, dec_bh,
     att_w, comb_w, comb_b, out_w, out_b) = P
    (g_enc_emb, g_fw_wx, g_fw_wh, g_fw_bx, g_fw_bh, g_bw_wx, g_bw_wh, g_bw_bx, g_bw_bh,
     g_init_w, g_init_b, g_dec_emb, g_dec_wx, g_dec_wh, g_dec_bx, g_dec_bh,
     g_att_w, g_comb_w, g_comb_b, g_out_w, g_out_b) = G

    d_ann = np.zeros((n, 2 * H))
    d_s = np.zeros(H)  # gradient flowing into S[t + 1] from step t + 1
    d_o = np.zeros(H)  # gradient flowing into O[t + 1] from step t + 1
    dlog = np.empty(V)
    sc_in = np.empty(3 * H)
    for t in range(m - 1, -1, -1):
        for v in range(V):
            dlog[v] = -weight * PR[t, v] / temp
        dlog[tgt[t]] += weight / temp
        o = O[t + 1]
        _add_outer(g_out_w, dlog, o)
        g_out_b += dlog
        d_o = d_o + np.dot(out_w.T, dlog)
        dpre = d_o * (1.0 - o * o)
        sc_in[:H] = S[t + 1]
        sc_in[H:] = C[t]
        _add_outer(g_comb_w, dpre, sc_in)
        g_comb_b += dpre
        d_sc = np.dot(comb_w.T, dpre)
        ds = d_s + d_sc[:H]
        dc = d_sc[H:]
        # attention
        da = np.dot(ann, dc)
        a = A[t]
        mean_da = np.dot(a, da)
        dscore = a * (da - mean_da)
        for i in range(n):
            d_ann[i] += a[i] * dc
        ds = ds + np.dot(dscore, keys)
        # keys = ann @ att_w.T ; dkeys[i] = dscore[i] * s
        s_cur = S[t + 1]
        for i in range(n):
            if dscore[i] != 0.0:
                dk = dscore[i] * s_cur
                _add_outer(g_att_w, dk, ann[i])
                d_ann[i] += np.dot(att_w.T, dk)
        d_prev, du = _gru_back(dec_wx, dec_wh, S[t], U[t], R[t], Z[t], N[t], HN[t],
                               ds, g_dec_wx, g_dec_wh, g_dec_bx, g_dec_bh)
        y_in = BOS if t == 0 else tgt[t - 1]
        g_dec_emb[y_in] += du[:D]
        d_o = du[D:].copy()
        d_s = d_prev
    # decoder init
    dpre0 = d_s * (1.0 - s0 * s0)
    _add_outer(g_init_w, dpre0, g)
    g_init_b += dpre0
    dg = np.dot(init_w.T, dpre0)
    # encoder, forward direction
    carry = dg[:H].copy()
    for i in range(n - 1, -1, -1):
        carry = carry + d_ann[i, :H]
        dh, dx = _gru_back(fw_wx, fw_wh, F[i], enc_emb[src[i]], fr[i], fz[i], fn[i], fhn[i],
                           carry, g_fw_wx, g_fw_wh, g_fw_bx, g_fw_bh)
        g_enc_emb[src[i]] += dx
        carry = dh
    # backward direction: B[i] = gru(B[i + 1], x_i)
    carry = dg[H:].copy()
    for i in range(n):
        carry = carry + d_ann[i, H:]
        dh, dx = _gru_back(bw_wx, bw_wh, B[i + 1], enc_emb[src[i]], br[i], bz[i], bn[i], bhn[i],
                           carry, g_bw_wx, g_bw_wh, g_bw_bx, g_bw_bh)
        g_enc_emb[src[i]] += dx
        carry = dh
    return total


@jit
def batch_logprob(flat, V, D, H, src_ids, src_off, tgt_ids, tgt_off, temp,
                  weights, grad, want_grad):
    """Log-probs of many pairs (CSR-packed); optionally sum weighted grads."""
    k = src_off.shape[0] - 1
    out = np.empty(k)
    for j in range(k):
        out[j] = pair_logprob(flat, V, D, H,
                              src_ids[src_off[j]:src_off[j + 1]],
                              tgt_ids[tgt_off[j]:tgt_off[j + 1]],
                              temp, weights[j], grad, want_grad)
    return out


# --------------------------------------------------------------------------
# free-running decoding


@jit
def sample_many(flat, V, D, H, src, temp, uniforms, max_steps):
    """Ancestral sampling from softmax(logits / temp).

    ``uniforms`` has shape (num_samples, max_steps) and drives the draws
    (inverse-CDF), so results depend only on those numbers. Returns token
    ids (EOS excluded, -1 padded), lengths, untempered log-probs and a
    truncation flag per sample.
    """
    P = unpack(flat, V, D, H)
    enc = _encode(P, src, H)
    ann, keys, s0 = enc[10], enc[11], enc[13]
    ns = uniforms.shape[0]
    toks = -np.ones((ns, max_steps), dtype=np.int64)
    lens = np.zeros(ns, dtype=np.int64)
    lps = np.zeros(ns)
    trunc = np.zeros(ns, dtype=np.bool_)
    n = src.shape[0]
    u = np.empty(D + H)
    s_new = np.empty(H)
    r = np.empty(H)
    z = np.empty(H)
    nn = np.empty(H)
    hn = np.empty(H)
    a = np.empty(n)
    c = np.empty(2 * H)
    o = np.empty(H)
    logits = np.empty(V)
    pt = np.empty(V)
    p1 = np.empty(V)
    for k in range(ns):
        s = s0.copy()
        o_prev = np.zeros(H)
        y = BOS
        done = False
        for t in range(max_steps):
            _dec_step(P, s, o_prev, y, ann, keys, D, H, u, s_new, r, z, nn, hn, a, c, o, logits)
            lse1 = _log_softmax(logits, 1.0, p1)
            if temp == 1.0:
                pt[:] = p1
            else:
                _log_softmax(logits, temp, pt)
            x = uniforms[k, t]
            acc = 0.0
            y = V - 1
            for v in range(V):
                acc += pt[v]
                if x < acc:
                    y = v
                    break
            while pt[y] == 0.0 and y > 0:  # rounding guard at the tail of the CDF
                y -= 1
            lps[k] += logits[y] - lse1
            s[:] = s_new
            o_prev[:] = o
            if y == EOS:
                done = True
                break
            toks[k, t] = y
            lens[k] = t + 1
        trunc[k] = not done
    return toks, lens, lps, trunc


@jit
def greedy(flat, V, D, H, src, max_steps):
    """Argmax decoding; EOS is forced (and scored) after ``max_steps`` tokens."""
    P = unpack(flat, V, D, H)
    enc = _encode(P, src, H)
    ann, keys, s0 = enc[10], enc[11], enc[13]
    n = src.shape[0]
    toks = np.empty(max_steps, dtype=np.int64)
    u = np.empty(D + H)
    s = s0.copy()
    s_new = np.empty(H)
    r = np.empty(H)
    z = np.empty(H)
    nn = np.empty(H)
    hn = np.empty(H)
    a = np.empty(n)
    c = np.empty(2 * H)
    o = np.zeros(H)
    o_prev = np.zeros(H)
    logits = np.empty(V)
    p = np.empty(V)
    y = BOS
    length = 0
    score = 0.0
    for t in range(max_steps + 1):
        _dec_step(P, s, o_prev, y, ann, keys, D, H, u, s_new, r, z, nn, hn, a, c, o, logits)
        lse = _log_softmax(logits, 1.0, p)
        y = int(np.argmax(logits)) if t < max_steps else EOS
        score += logits[y] - lse
        if y == EOS:
            break
        toks[length] = y
        length += 1
        s[:] = s_new
        o_prev[:] = o
    return toks[:length].copy(), score


@jit
def beam(flat, V, D, H, src, beam_size, max_steps):
    """Length-unnormalised beam search.

    Each step keeps the best ``beam_size - finished`` candidates over all
    live hypotheses (ranked by total log-prob, ties by token id then parent
    rank); candidates ending in EOS leave the beam as finished hypotheses.
    With ``beam_size=1`` this is exactly greedy decoding. Hypotheses reaching
    ``max_steps`` tokens are finished with a scored EOS.
    """
    P = unpack(flat, V, D, H)
    enc = _encode(P, src, H)
    ann, keys, s0 = enc[10], enc[11], enc[13]
    n = src.shape[0]
    K = beam_size
    live_tok = np.zeros((K, max_steps + 1), dtype=np.int64)
    live_len = 0
    live_score = np.zeros(K)
    live_s = np.zeros((K, H))
    live_o = np.zeros((K, H))
    n_live = 1
    n_fin = 0
    live_s[0] = s0
    best_tok = np.zeros(max_steps + 1, dtype=np.int64)
    best_len = 0
    best_score = -np.inf

    u = np.empty(D + H)
    r = np.empty(H)
    z = np.empty(H)
    nn = np.empty(H)
    hn = np.empty(H)
    a = np.empty(n)
    c = np.empty(2 * H)
    logits = np.empty(V)
    p = np.empty(V)
    new_s = np.empty((K, H))
    new_o = np.empty((K, H))
    cand = np.empty(K * V)
    while n_live > 0:
        forced = live_len == max_steps
        for b in range(n_live):
            y = BOS if live_len == 0 else live_tok[b, live_len - 1]
            _dec_step(P, live_s[b], live_o[b], y, ann, keys, D, H,
                      u, new_s[b], r, z, nn, hn, a, c, new_o[b], logits)
            lse = _log_softmax(logits, 1.0, p)
            for v in range(V):
                cand[v * K + b] = live_score[b] + (logits[v] - lse)
        # token-major enumeration + stable sort: ties go to the lower token id,
        # then to the higher-ranked parent
        vs = np.arange(EOS, EOS + 1) if forced else np.arange(V)
        ncand = n_live * vs.shape[0]
        idx = np.empty(ncand, dtype=np.int64)
        q = 0
        for v in vs:
            for b in range(n_live):
                idx[q] = v * K + b
                q += 1
        keyv = np.empty(ncand)
        for q in range(ncand):
            keyv[q] = -cand[idx[q]]
        order = np.argsort(keyv, kind="mergesort")
        slots = K - n_fin
        nxt_tok = np.zeros((K, max_steps + 1), dtype=np.int64)
        nxt_score = np.zeros(K)
        nxt_s = np.zeros((K, H))
        nxt_o = np.zeros((K, H))
        m = 0
        for q in range(min(slots, ncand)):
            ci = idx[order[q]]
            v = ci // K
            b = ci % K
            sc = cand[ci]
            if v == EOS:
                n_fin += 1
                if sc > best_score:
                    best_score = sc
                    best_len = live_len
                    best_tok[:live_len] = live_tok[b, :live_len]
            else:
                nxt_tok[m, :live_len] = live_tok[b, :live_len]
                nxt_tok[m, live_len] = v
                nxt_score[m] = sc
                nxt_s[m] = new_s[b]
                nxt_o[m] = new_o[b]
                m += 1
        n_live = m
        live_len += 1
        live_tok = nxt_tok
        live_score = nxt_score
        live_s = nxt_s
        live_o = nxt_o
    return best_tok[:best_len].copy(), best_score
