"""Independent reference implementations used as test oracles.

Two evaluators, both pure (no running-stat updates) and float64:

* scalar_forward: loop-by-loop scalar evaluation, as close to the math on
  paper as python allows; slow, for small nets only.
* ref_forward: vectorized float64 evaluation built on scipy's correlate2d
  for convolutions; fast enough to finite-difference.

Neither shares code with grouprune.engine.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import correlate2d

from grouprune import ir as _ir


def _component_inputs(ir, values, x, comp):
    feeds = {}
    for e in ir.edges:
        feeds[(e.dst, e.dst_port)] = e
    raw = set(ir.input_consumers)
    ins = []
    for port in range(_ir.num_input_ports(comp)):
        if (comp.comp_id, port) in raw:
            ins.append(x)
            continue
        e = feeds[(comp.comp_id, port)]
        val = values[e.src]
        src = ir.component(e.src)
        if src.kind == "split":
            lo = _ir.output_port_offset(src, e.src_port)
            hi = lo + _ir.output_port_channels(src, e.src_port)
            val = val[:, lo:hi]
        ins.append(val)
    return ins


# ---------------------------------------------------------------------------
# Scalar loop-by-loop evaluator


def _scalar_linear(comp, x, weights):
    w = weights[comp.params["weight"]]
    b = weights.get(comp.params.get("bias"))
    n, d_in = x.shape
    d_out = w.shape[0]
    out = np.zeros((n, d_out))
    for s in range(n):
        for o in range(d_out):
            acc = 0.0 if b is None else float(b[o])
            for i in range(d_in):
                acc += float(x[s, i]) * float(w[o, i])
            out[s, o] = acc
    return out


def _scalar_conv2d(comp, x, weights):
    a = comp.attrs
    w = weights[comp.params["weight"]]
    b = weights.get(comp.params.get("bias"))
    k, s, p, g = a["kernel"], a["stride"], a["padding"], a["groups"]
    n, c, h, wid = x.shape
    cg = c // g
    ocg = a["out_channels"] // g
    oh = (h + 2 * p - k) // s + 1
    ow = (wid + 2 * p - k) // s + 1
    xp = np.zeros((n, c, h + 2 * p, wid + 2 * p))
    xp[:, :, p:p + h, p:p + wid] = x
    out = np.zeros((n, a["out_channels"], oh, ow))
    for sample in range(n):
        for oc in range(a["out_channels"]):
            grp = oc // ocg
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0 if b is None else float(b[oc])
                    for ic in range(cg):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (float(xp[sample, grp * cg + ic,
                                                 i * s + ki, j * s + kj])
                                        * float(w[oc, ic, ki, kj]))
                    out[sample, oc, i, j] = acc
    return out


def _scalar_batchnorm(comp, x, weights, mode):
    a = comp.attrs
    c = a["num_features"]
    eps = a.get("eps", 1e-5)
    gamma = weights[comp.params["gamma"]]
    beta = weights[comp.params["beta"]]
    out = np.zeros_like(x, dtype=np.float64)
    for ch in range(c):
        sl = x[:, ch] if x.ndim == 2 else x[:, ch, :, :]
        if mode == "train":
            mu = float(sl.mean())
            var = float(((sl - mu) ** 2).mean())
        else:
            mu = float(weights[comp.params["running_mean"]][ch])
            var = float(weights[comp.params["running_var"]][ch])
        norm = (sl - mu) / np.sqrt(var + eps)
        res = norm * float(gamma[ch]) + float(beta[ch])
        if x.ndim == 2:
            out[:, ch] = res
        else:
            out[:, ch, :, :] = res
    return out


def _scalar_pool(comp, x, _weights):
    k = comp.attrs["kernel"]
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // k, w // k))
    for s in range(n):
        for ch in range(c):
            for i in range(h // k):
                for j in range(w // k):
                    win = x[s, ch, i * k:(i + 1) * k, j * k:(j + 1) * k]
                    out[s, ch, i, j] = (win.mean() if comp.attrs["op"] == "avg"
                                        else win.max())
    return out


def scalar_forward(ir, x, mode: str = "eval") -> np.ndarray:
    """Loop-by-loop float64 evaluation; pure, slow, for small nets."""
    x = np.asarray(x, dtype=np.float64)
    values = {}
    for comp in ir.topo_order():
        ins = _component_inputs(ir, values, x, comp)
        k = comp.kind
        if k == "linear":
            out = _scalar_linear(comp, ins[0], ir.weights)
        elif k == "conv2d":
            out = _scalar_conv2d(comp, ins[0], ir.weights)
        elif k == "batchnorm":
            out = _scalar_batchnorm(comp, ins[0], ir.weights, mode)
        elif k == "activation":
            fn = comp.attrs["fn"]
            out = (np.maximum(ins[0], 0) if fn == "relu"
                   else np.tanh(ins[0]) if fn == "tanh" else ins[0])
        elif k == "pool":
            out = _scalar_pool(comp, ins[0], ir.weights)
        elif k == "eltwise":
            out = ins[0] + ins[1] if comp.attrs["op"] == "add" else ins[0] * ins[1]
        elif k == "concat":
            out = np.concatenate(ins, axis=1)
        elif k == "split":
            out = ins[0]
        elif k == "flatten":
            n = ins[0].shape[0]
            out = ins[0].reshape(n, -1)
        else:
            raise AssertionError(k)
        values[comp.comp_id] = out
    return values[ir.exit_component().comp_id]


# ---------------------------------------------------------------------------
# Vectorized float64 reference (scipy convolutions), fast enough to
# finite-difference.


def _ref_conv2d(comp, x, weights):
    a = comp.attrs
    w = weights[comp.params["weight"]].astype(np.float64)
    k, s, p, g = a["kernel"], a["stride"], a["padding"], a["groups"]
    n, c, h, wid = x.shape
    cg = c // g
    ocg = a["out_channels"] // g
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    oh = (h + 2 * p - k) // s + 1
    ow = (wid + 2 * p - k) // s + 1
    out = np.zeros((n, a["out_channels"], oh, ow))
    for sample in range(n):
        for oc in range(a["out_channels"]):
            grp = oc // ocg
            acc = np.zeros((h + 2 * p - k + 1, wid + 2 * p - k + 1))
            for ic in range(cg):
                acc += correlate2d(xp[sample, grp * cg + ic],
                                   w[oc, ic], mode="valid")
            out[sample, oc] = acc[::s, ::s]
    if "bias" in comp.params:
        out += weights[comp.params["bias"]].astype(np.float64).reshape(1, -1, 1, 1)
    return out


def ref_forward(ir, x, mode: str = "eval") -> np.ndarray:
    """Vectorized float64 evaluation; pure (never updates running stats)."""
    x = np.asarray(x, dtype=np.float64)
    values = {}
    for comp in ir.topo_order():
        ins = _component_inputs(ir, values, x, comp)
        k = comp.kind
        a = comp.attrs
        if k == "linear":
            w = ir.weights[comp.params["weight"]].astype(np.float64)
            out = ins[0] @ w.T
            if "bias" in comp.params:
                out = out + ir.weights[comp.params["bias"]].astype(np.float64)
        elif k == "conv2d":
            out = _ref_conv2d(comp, ins[0], ir.weights)
        elif k == "batchnorm":
            xin = ins[0]
            axes = (0,) if xin.ndim == 2 else (0, 2, 3)
            if mode == "train":
                mu = xin.mean(axis=axes)
                var = xin.var(axis=axes)
            else:
                mu = ir.weights[comp.params["running_mean"]].astype(np.float64)
                var = ir.weights[comp.params["running_var"]].astype(np.float64)
            shape = (1, -1) if xin.ndim == 2 else (1, -1, 1, 1)
            xhat = (xin - mu.reshape(shape)) / np.sqrt(var.reshape(shape)
                                                       + a.get("eps", 1e-5))
            out = (xhat * ir.weights[comp.params["gamma"]].astype(np.float64).reshape(shape)
                   + ir.weights[comp.params["beta"]].astype(np.float64).reshape(shape))
        elif k == "activation":
            fn = a["fn"]
            out = (np.maximum(ins[0], 0) if fn == "relu"
                   else np.tanh(ins[0]) if fn == "tanh" else ins[0])
        elif k == "pool":
            kk = a["kernel"]
            n, c, h, wd = ins[0].shape
            win = ins[0].reshape(n, c, h // kk, kk, wd // kk, kk)
            out = win.mean(axis=(3, 5)) if a["op"] == "avg" else win.max(axis=(3, 5))
        elif k == "eltwise":
            out = ins[0] + ins[1] if a["op"] == "add" else ins[0] * ins[1]
        elif k == "concat":
            out = np.concatenate(ins, axis=1)
        elif k == "split":
            out = ins[0]
        elif k == "flatten":
            out = ins[0].reshape(ins[0].shape[0], -1)
        else:
            raise AssertionError(k)
        values[comp.comp_id] = out
    return values[ir.exit_component().comp_id]


def ref_loss(ir, x, labels, mode: str = "train") -> float:
    """Float64 cross-entropy of the reference forward."""
    logits = ref_forward(ir, x, mode)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def as_float64(ir):
    """Copy with float64 weight storage so finite-difference steps are
    exact; the parameter values themselves are unchanged."""
    out = ir.copy()
    out.weights = {k: v.astype(np.float64) for k, v in out.weights.items()}
    return out


def fd_param_grads(ir, x, labels, names=None, h: float = 1e-4,
                   mode: str = "train") -> dict[str, np.ndarray]:
    """Central finite differences of ref_loss w.r.t. every element of the
    named parameters (all trainable ones by default)."""
    from grouprune.engine import trainable_param_names

    names = names if names is not None else trainable_param_names(ir)
    ir = as_float64(ir)
    grads = {}
    for name in names:
        w = ir.weights[name]
        g = np.zeros(w.shape, dtype=np.float64)
        flat = w.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = ref_loss(ir, x, labels, mode)
            flat[i] = orig - h
            down = ref_loss(ir, x, labels, mode)
            flat[i] = orig
            g.reshape(-1)[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def fd_scalar(fn, ir, names=None, h: float = 1e-4) -> dict[str, np.ndarray]:
    """Central finite differences of an arbitrary scalar fn(ir)."""
    from grouprune.engine import trainable_param_names

    names = names if names is not None else trainable_param_names(ir)
    ir = as_float64(ir)
    grads = {}
    for name in names:
        w = ir.weights[name]
        g = np.zeros(w.shape, dtype=np.float64)
        flat = w.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(ir)
            flat[i] = orig - h
            down = fn(ir)
            flat[i] = orig
            g.reshape(-1)[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def rel_err(a, b, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def grad_rel_err(analytic, fd, scale_floor: float = 1e-2) -> float:
    """Worst deviation relative to the tensor's gradient scale.

    Per-element relative error is meaningless for entries whose true
    gradient is zero (float32 noise ~1e-6 remains in the analytic value),
    so deviations are measured against the largest gradient magnitude in
    the tensor, floored for all-zero tensors.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    scale = max(float(np.abs(fd).max()), float(np.abs(analytic).max()),
                scale_floor)
    return float(np.abs(analytic - fd).max() / scale)


# ---------------------------------------------------------------------------
# Graph oracles


def boolean_closure(adj: np.ndarray) -> np.ndarray:
    """Transitive closure by repeated boolean matrix product."""
    n = adj.shape[0]
    reach = (adj.astype(bool) | np.eye(n, dtype=bool))
    while True:
        nxt = reach | (reach @ reach)
        if (nxt == reach).all():
            return nxt
        reach = nxt


def closure_components(adj: np.ndarray) -> set[frozenset]:
    reach = boolean_closure(adj)
    return {frozenset(np.flatnonzero(reach[i])) for i in range(adj.shape[0])}


def literal_expansion(adj: np.ndarray) -> set[frozenset]:
    """Group expansion exactly as a per-node repeat-until-fixpoint frontier
    loop: start from each node, add every unseen neighbor of the current
    set, repeat until the frontier is empty."""
    n = adj.shape[0]
    out = set()
    for start in range(n):
        g = {start}
        while True:
            unseen = set(range(n)) - g
            frontier = {j for j in unseen if any(adj[k, j] for k in g)}
            if not frontier:
                break
            g |= frontier
        out.add(frozenset(g))
    return out
