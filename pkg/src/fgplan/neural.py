"""Minimal dense-tensor core with reverse-mode differentiation.

Just enough machinery for the message-passing network: rank<=2 tensors on
numpy buffers, a recording tape, MLPs, the learnable softmax aggregator with
MAX/SUM/MEAN alternatives, L1 loss and Adam. Single precision for training,
double precision for gradient checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DTYPES = {"single": np.float32, "double": np.float64}


class NeuralError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        if arr.ndim > 2:
            raise NeuralError(f"rank {arr.ndim} tensors are not supported")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.shape} dtype={self.dtype}>"


class Tape:
    """Recorded op list; replaying backward visits every op exactly once."""

    def __init__(self, debug_checks=False):
        self.ops = []  # (output, inputs, backward_fn)
        self.consumed = False
        self.debug_checks = debug_checks

    def record(self, out, inputs, backward_fn):
        if self.debug_checks and not np.all(np.isfinite(out.data)):
            raise NeuralError("non-finite values in forward pass")
        self.ops.append((out, inputs, backward_fn))
        return out


def backward(tape: Tape, loss: Tensor):
    """Accumulate gradients of `loss` into every tensor on the tape."""
    if tape.consumed:
        raise NeuralError("tape already consumed")
    tape.consumed = True
    if loss.data.size != 1:
        raise NeuralError("loss must be a scalar")
    loss.grad = np.ones_like(loss.data)
    for out, inputs, back in reversed(tape.ops):
        if out.grad is None:
            continue
        grads = back(out.grad)
        for t, g in zip(inputs, grads):
            if g is not None:
                t.accumulate(g)


# ---------------------------------------------------------------------------
# Primitive ops


def matmul(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[0]:
        raise NeuralError(f"matmul shape mismatch {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    return tape.record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def add_bias(tape, x: Tensor, b: Tensor) -> Tensor:
    out = Tensor(x.data + b.data)
    def back(g):
        gb = g.sum(axis=0) if g.ndim > b.data.ndim else g
        return g, gb
    return tape.record(out, (x, b), back)


def add(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise NeuralError(f"add shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    return tape.record(out, (a, b), lambda g: (g, g))


def relu(tape, x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0))
    return tape.record(out, (x,), lambda g: (g * mask,))


def concat_cols(tape, tensors) -> Tensor:
    widths = [t.data.shape[1] for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1))
    splits = np.cumsum(widths)[:-1]
    return tape.record(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=1)))


def _scatter_add_rows(target, idx, rows):
    """target[idx] += rows, with a fixed (index-sorted) reduction order."""
    order = np.argsort(idx, kind="stable")
    sid = idx[order]
    starts = np.flatnonzero(np.r_[True, sid[1:] != sid[:-1]])
    sums = np.add.reduceat(rows[order], starts, axis=0)
    target[sid[starts]] += sums


def gather_rows(tape, x: Tensor, idx: np.ndarray) -> Tensor:
    out = Tensor(x.data[idx])
    def back(g):
        gx = np.zeros_like(x.data)
        _scatter_add_rows(gx, idx, g)
        return (gx,)
    return tape.record(out, (x,), back)


def scale(tape, x: Tensor, s: float) -> Tensor:
    out = Tensor(x.data * s)
    return tape.record(out, (x,), lambda g: (g * s,))


# ---------------------------------------------------------------------------
# Segment aggregation (rows grouped by a sorted segment-id array)


def _segment_starts(seg_ids):
    """Run starts of a sorted segment-id array (callers keep ids sorted)."""
    if seg_ids.size == 0:
        return seg_ids, np.zeros(0, dtype=np.int64)
    starts = np.flatnonzero(np.r_[True, seg_ids[1:] != seg_ids[:-1]])
    return seg_ids[starts], starts


def _segment_sums(values, seg_ids, n_seg):
    uniq, starts = _segment_starts(seg_ids)
    out = np.zeros((n_seg,) + values.shape[1:], dtype=values.dtype)
    if starts.size:
        out[uniq] = np.add.reduceat(values, starts, axis=0)
    return out


def segment_softmax_aggregate(tape, m: Tensor, theta: Tensor, seg_ids, n_seg) -> Tensor:
    """Learnable softmax-weighted sum per segment.

    out_s = sum_i softmax_i(theta . m_i) * m_i over the rows of segment s.
    Stabilized with per-segment max subtraction (treated as constant).
    Segment ids must be sorted; empty segments yield zero rows.
    """
    if m.data.shape[0] == 0:
        raise NeuralError("empty row set")
    logits = m.data @ theta.data  # [E]
    uniq, starts = _segment_starts(seg_ids)
    seg_max = np.zeros(n_seg, dtype=m.data.dtype)
    seg_max[uniq] = np.maximum.reduceat(logits, starts)
    z = np.exp(logits - seg_max[seg_ids])
    denom = np.zeros(n_seg, dtype=m.data.dtype)
    denom[uniq] = np.add.reduceat(z, starts)
    w = z / denom[seg_ids]  # [E]
    out_data = _segment_sums(m.data * w[:, None], seg_ids, n_seg)
    out = Tensor(out_data)

    def back(g):
        g_e = g[seg_ids]                      # [E, D]
        diff = m.data - out_data[seg_ids]     # m_i - out_s
        dots = np.einsum("ed,ed->e", g_e, diff)
        gm = w[:, None] * (g_e + dots[:, None] * theta.data[None, :])
        gdot_m = np.einsum("ed,ed->e", g_e, m.data)
        gtheta = (w * gdot_m)[:, None] * diff
        return gm, gtheta.sum(axis=0)

    return tape.record(out, (m, theta), back)


def segment_aggregate(tape, m: Tensor, mode: str, seg_ids, n_seg) -> Tensor:
    """MAX / SUM / MEAN per segment; MAX routes gradient to the argmax row
    per coordinate (lowest index on ties)."""
    if m.data.shape[0] == 0:
        raise NeuralError("empty row set")
    if mode == "SUM":
        out = Tensor(_segment_sums(m.data, seg_ids, n_seg))
        return tape.record(out, (m,), lambda g: (g[seg_ids],))
    if mode == "MEAN":
        # Same computation path as the softmax aggregator at theta = 0
        # (per-row weight, then segment sum), so the two agree bitwise.
        counts = np.bincount(seg_ids, minlength=n_seg).astype(m.data.dtype)
        w = 1.0 / np.maximum(counts, 1.0)[seg_ids]
        out = Tensor(_segment_sums(m.data * w[:, None], seg_ids, n_seg))
        return tape.record(out, (m,), lambda g: (g[seg_ids] * w[:, None],))
    if mode == "MAX":
        n_rows, d = m.data.shape
        uniq, starts = _segment_starts(seg_ids)
        seg_max = np.zeros((n_seg, d), dtype=m.data.dtype)
        seg_max[uniq] = np.maximum.reduceat(m.data, starts, axis=0)
        # Argmax per (segment, column); ties go to the lowest row index.
        eidx = np.broadcast_to(np.arange(n_rows)[:, None], (n_rows, d))
        cand = np.where(m.data == seg_max[seg_ids], eidx, n_rows)
        argmax = np.full((n_seg, d), n_rows, dtype=np.int64)
        argmax[uniq] = np.minimum.reduceat(cand, starts, axis=0)
        out = Tensor(seg_max)

        def back(g):
            gm = np.zeros_like(m.data)
            valid = argmax < n_rows
            cols = np.broadcast_to(np.arange(d), (n_seg, d))
            np.add.at(gm, (argmax[valid], cols[valid]), g[valid])
            return (gm,)

        return tape.record(out, (m,), back)
    raise NeuralError(f"unknown aggregation mode {mode!r}")


def softmax_aggregate(tape, rows, theta: Tensor) -> Tensor:
    """Single-set convenience wrapper over the segment version."""
    if not rows:
        raise NeuralError("empty row set")
    m = stack_rows(tape, rows)
    out = segment_softmax_aggregate(tape, m, theta, np.zeros(len(rows), dtype=np.int64), 1)
    return row(tape, out, 0)


def aggregate_alt(tape, rows, mode: str) -> Tensor:
    if not rows:
        raise NeuralError("empty row set")
    m = stack_rows(tape, rows)
    out = segment_aggregate(tape, m, mode, np.zeros(len(rows), dtype=np.int64), 1)
    return row(tape, out, 0)


def stack_rows(tape, rows) -> Tensor:
    out = Tensor(np.stack([r.data.reshape(-1) for r in rows]))
    def back(g):
        return tuple(g[i].reshape(rows[i].data.shape) for i in range(len(rows)))
    return tape.record(out, tuple(rows), back)


def row(tape, x: Tensor, i: int) -> Tensor:
    out = Tensor(x.data[i])
    def back(g):
        gx = np.zeros_like(x.data)
        gx[i] = g
        return (gx,)
    return tape.record(out, (x,), back)


# ---------------------------------------------------------------------------
# Losses


def l1_loss(tape, pred: Tensor, target: Tensor, weights=None) -> Tensor:
    """Mean absolute error; per-element weights replace the uniform 1/n.

    Subgradient at exact ties is 0.
    """
    if pred.shape != target.shape:
        raise NeuralError(f"l1 shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    if weights is None:
        weights = np.full(pred.data.shape, 1.0 / pred.data.size, dtype=pred.data.dtype)
    out = Tensor(np.array(np.sum(np.abs(diff) * weights), dtype=pred.data.dtype))
    sign = np.sign(diff) * weights
    return tape.record(out, (pred,), lambda g: (g * sign,))


# ---------------------------------------------------------------------------
# MLPs


@dataclass
class MlpParams:
    """Affine stack with ReLU hidden activations and a linear output."""

    weights: list[Tensor]
    biases: list[Tensor]

    def tensors(self, prefix):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out

    @property
    def in_dim(self):
        return self.weights[0].shape[0]


def mlp_init(rng, dims, dtype=np.float32) -> MlpParams:
    """Kaiming-uniform weights, zero biases; dims = [in, h1, ..., out]."""
    ws, bs = [], []
    for a, b in zip(dims, dims[1:]):
        bound = math.sqrt(6.0 / a)
        ws.append(Tensor(rng.uniform(-bound, bound, size=(a, b)), requires_grad=True, dtype=dtype))
        bs.append(Tensor(np.zeros(b), requires_grad=True, dtype=dtype))
    return MlpParams(ws, bs)


def mlp_apply(p: MlpParams, x: Tensor, tape: Tape) -> Tensor:
    h = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = add_bias(tape, matmul(tape, h, w), b)
        if i < last:
            h = relu(tape, h)
    return h


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0001
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr=None):
    """One Adam update from the gradients stored on the parameter tensors.

    Decoupled weight decay; parameters with no gradient only shrink.
    """
    lr = state.lr if lr is None else lr
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name in sorted(params):
        p = params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise NeuralError(f"gradient shape mismatch for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1 ** t)
        v_hat = state.v[name] / (1 - b2 ** t)
        p.data = p.data - lr * (m_hat / (np.sqrt(v_hat) + state.eps)
                                + state.weight_decay * p.data)


def lr_at_epoch(base_lr: float, epoch: int, step: int = 7, factor: float = 0.1) -> float:
    """Step decay: multiply by `factor` every `step` epochs (epoch 0-based)."""
    return base_lr * factor ** (epoch // step)


# ---------------------------------------------------------------------------
# Gradient verification


def finite_diff_check(forward_fn, params: dict[str, Tensor], probes: int = 30,
                      tol: float = 1e-4, seed: int = 0, h: float = 1e-6):
    """Compare analytic gradients against central finite differences.

    forward_fn(tape) must rebuild the forward pass from the current
    parameter values and return the scalar loss. Parameters must be double
    precision. Returns a report dict; report["passed"] is the verdict.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise NeuralError(f"finite_diff_check needs double precision ({name})")
        p.zero_grad()
    tape = Tape()
    loss = forward_fn(tape)
    backward(tape, loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}

    rng = np.random.default_rng(seed)
    names = sorted(params)
    sizes = np.array([params[n].data.size for n in names])
    cum = np.cumsum(sizes)
    total = int(cum[-1])
    picks = rng.choice(total, size=min(probes, total), replace=False)
    worst = 0.0
    entries = []
    for flat in sorted(int(x) for x in picks):
        k = int(np.searchsorted(cum, flat, side="right"))
        offset = flat - (cum[k - 1] if k > 0 else 0)
        p = params[names[k]]
        orig = p.data.flat[offset]
        p.data.flat[offset] = orig + h
        lp = float(forward_fn(Tape()).data)
        p.data.flat[offset] = orig - h
        lm = float(forward_fn(Tape()).data)
        p.data.flat[offset] = orig
        numeric = (lp - lm) / (2 * h)
        exact = float(analytic[names[k]].flat[offset])
        denom = max(abs(numeric), abs(exact), 1e-8)
        rel = abs(numeric - exact) / denom
        worst = max(worst, rel)
        entries.append({"param": names[k], "index": int(offset),
                        "analytic": exact, "numeric": numeric, "rel_err": rel})
    return {"passed": worst < tol, "max_rel_err": worst, "tol": tol, "probes": entries}
