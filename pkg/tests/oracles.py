"""Independent reference computations. Nothing here imports the code under test's math."""

import math
from fractions import Fraction

import numpy as np
import torch


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def cnn_forward_numpy(ids, emb, convs, out_w, out_b):
    """One example, loops only. convs: list of (weight[k, d, w], bias[k])."""
    x = emb[ids]  # T x d
    feats = []
    for weight, bias in convs:
        k, d, w = weight.shape
        for f in range(k):
            best = -math.inf
            for t in range(len(ids) - w + 1):
                s = bias[f]
                for j in range(w):
                    for c in range(d):
                        s += weight[f, c, j] * x[t + j, c]
                best = max(best, max(s, 0.0))
            feats.append(best)
    logits = [out_b[o] + sum(out_w[o, i] * feats[i] for i in range(len(feats))) for o in range(2)]
    return softmax(logits)


def _sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def lstm_direction(xs, w_ih, w_hh, b):
    """Scalar LSTM recurrence; gate rows ordered input, forget, cell, output."""
    hsz = w_hh.shape[1]
    h = [0.0] * hsz
    c = [0.0] * hsz
    for x in xs:
        pre = []
        for r in range(4 * hsz):
            s = b[r]
            s += sum(w_ih[r, j] * x[j] for j in range(len(x)))
            s += sum(w_hh[r, j] * h[j] for j in range(hsz))
            pre.append(s)
        i = [_sigmoid(pre[u]) for u in range(hsz)]
        f = [_sigmoid(pre[hsz + u]) for u in range(hsz)]
        g = [math.tanh(pre[2 * hsz + u]) for u in range(hsz)]
        o = [_sigmoid(pre[3 * hsz + u]) for u in range(hsz)]
        c = [f[u] * c[u] + i[u] * g[u] for u in range(hsz)]
        h = [o[u] * math.tanh(c[u]) for u in range(hsz)]
    return h


def bilstm_forward_scalar(ids, emb, fwd, bwd, out_w, out_b):
    """fwd/bwd: (w_ih, w_hh, bias) per direction; ids are the unpadded tokens."""
    xs = [emb[i] for i in ids]
    hf = lstm_direction(xs, *fwd)
    hb = lstm_direction(xs[::-1], *bwd)
    feats = hf + hb
    logits = [out_b[o] + sum(out_w[o, i] * feats[i] for i in range(len(feats))) for o in range(2)]
    return softmax(logits)


def finite_difference_check(model, loss_fn, step=1e-5, skip=None):
    """Max relative error between autograd and central differences over every
    trainable parameter element. ``skip(name, index)`` excludes frozen entries."""
    model.zero_grad()
    loss_fn().backward()
    worst = 0.0
    checked = 0
    with torch.no_grad():
        for name, p in model.named_parameters():
            if not p.requires_grad:
                continue
            analytic = p.grad.detach().clone()
            flat = p.view(-1)
            for k in range(flat.numel()):
                idx = np.unravel_index(k, p.shape)
                if skip is not None and skip(name, idx):
                    continue
                orig = flat[k].item()
                flat[k] = orig + step
                up = loss_fn().item()
                flat[k] = orig - step
                down = loss_fn().item()
                flat[k] = orig
                numeric = (up - down) / (2 * step)
                a = analytic.view(-1)[k].item()
                denom = max(abs(a), abs(numeric), 1e-6)
                worst = max(worst, abs(a - numeric) / denom)
                checked += 1
    return worst, checked


def naive_mean(member_dicts, ids):
    out = {}
    for pid in ids:
        vals = [m[pid] for m in member_dicts]
        total = 0.0
        for v in vals:
            total += v
        out[pid] = total / len(vals)
    return out


def tally(pred, gold):
    tp = fp = fn = tn = 0
    for p, g in zip(pred, gold):
        if p == 1 and g == 1:
            tp += 1
        elif p == 1 and g == 0:
            fp += 1
        elif p == 0 and g == 1:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def exact_f1(tp, fp, fn):
    if tp == 0:
        return Fraction(0)
    return Fraction(2 * tp, 2 * tp + fp + fn)


def exhaustive_threshold(probs, gold, grid):
    """Scan every grid value with exact arithmetic; smallest threshold wins ties."""
    best = None
    for t in sorted(grid):
        pred = [1 if p >= t else 0 for p in probs]
        tp, fp, fn, _ = tally(pred, gold)
        f1 = exact_f1(tp, fp, fn)
        if best is None or f1 > best[1]:
            best = (t, f1)
    return best
