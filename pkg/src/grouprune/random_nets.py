"""Seeded random valid networks for property testing.

The generator grows a DAG op by op from a pool of open outputs, tracking
which outputs are index-coupled ("islands"): anything downstream of the
same plain conv/linear without another one in between shares its island.
Multi-input joins only take operands from pairwise-disjoint islands, which
rules out the one genuinely inconsistent pattern (re-joining two offset
copies of the same coordinate through concat), while still producing
residual diamonds, fan-out, splits, grouped convolutions and flattens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ir import (NetworkIR, activation, batchnorm, concat, conv2d, eltwise,
                 flatten, init_weights, linear, pool, split)


@dataclass
class _Open:
    comp_id: str
    src_port: int
    channels: int
    h: int | None      # None in the flat domain
    w: int | None
    islands: frozenset


class _Builder:
    def __init__(self, rng, smooth=False):
        self.rng = rng
        self.smooth = smooth
        self.components = []
        self.edges = []
        self.counters = {}
        self.next_island = 0

    def fresh_island(self):
        self.next_island += 1
        return frozenset([self.next_island])

    def new_id(self, kind):
        n = self.counters.get(kind, 0)
        self.counters[kind] = n + 1
        return f"{kind}{n}"

    def add(self, comp, inputs):
        """inputs: list of _Open consumed per port."""
        self.components.append(comp)
        for port, op in enumerate(inputs):
            self.edges.append((op.comp_id, op.src_port, comp.comp_id, port))

    def act_fn(self):
        return "tanh" if self.smooth else str(self.rng.choice(["relu", "tanh"]))

    def pool_op(self):
        return "avg" if self.smooth else str(self.rng.choice(["avg", "max"]))


def _pick(rng, opens, pred=None):
    cands = [i for i, o in enumerate(opens) if pred is None or pred(o)]
    if not cands:
        return None
    return opens.pop(int(rng.choice(cands)))


def _disjoint_pair(rng, opens, same_shape=True):
    """Two opens with disjoint islands (and equal shapes if asked)."""
    idxs = list(range(len(opens)))
    rng.shuffle(idxs)
    for i in idxs:
        for j in idxs:
            if i == j:
                continue
            a, b = opens[i], opens[j]
            if same_shape and (a.channels, a.h, a.w) != (b.channels, b.h, b.w):
                continue
            if a.islands & b.islands:
                continue
            for k in sorted((i, j), reverse=True):
                opens.pop(k)
            return a, b
    return None


def random_ir(seed: int, max_components: int = 30, smooth: bool = False,
              conv_domain: bool | None = None, max_channels: int = 10,
              spatial_choices=(4, 8)) -> NetworkIR:
    """One random valid network.

    smooth=True restricts to tanh activations and average pooling so the
    whole network is differentiable everywhere (finite-difference tests).
    """
    rng = np.random.default_rng(seed)
    b = _Builder(rng, smooth)
    if conv_domain is None:
        conv_domain = rng.random() < 0.75

    def add_conv(src, out_ch=None, kernel=None):
        out_ch = out_ch or int(rng.integers(2, max_channels))
        kernel = kernel if kernel is not None else (3 if rng.random() < 0.7 else 1)
        comp = conv2d(b.new_id("conv"), src.channels, out_ch, kernel=kernel,
                      padding=kernel // 2, bias=bool(rng.random() < 0.8))
        b.add(comp, [src])
        return _Open(comp.comp_id, 0, out_ch, src.h, src.w, b.fresh_island())

    def add_linear(src, out_f=None):
        out_f = out_f or int(rng.integers(2, max_channels + 2))
        comp = linear(b.new_id("fc"), src.channels, out_f,
                      bias=bool(rng.random() < 0.8))
        b.add(comp, [src])
        return _Open(comp.comp_id, 0, out_f, None, None, b.fresh_island())

    # entry
    if conv_domain:
        c0 = int(rng.integers(1, 4))
        hw = int(rng.choice(list(spatial_choices)))
        input_shape = (c0, hw, hw)
        stem = conv2d(b.new_id("conv"), c0, int(rng.integers(3, max_channels)),
                      kernel=3, padding=1)
        b.components.append(stem)
        opens = [_Open(stem.comp_id, 0, stem.attrs["out_channels"], hw, hw,
                       b.fresh_island())]
    else:
        f0 = int(rng.integers(2, max(4, max_channels - 2)))
        input_shape = (f0,)
        stem = linear(b.new_id("fc"), f0, int(rng.integers(3, max_channels + 2)))
        b.components.append(stem)
        opens = [_Open(stem.comp_id, 0, stem.attrs["out_features"], None, None,
                       b.fresh_island())]
    input_consumers = [(stem.comp_id, 0)]

    def budget():
        return max_components - len(b.components) - (2 * len(opens) + 4)

    fanout_p = 0.18
    spins = 0
    while budget() > 0 and spins < 200:
        spins += 1
        kind = rng.choice(
            ["conv", "norm", "act", "pool", "eltwise", "concat", "split"]
            if conv_domain else
            ["linear", "norm", "act", "eltwise", "concat", "split"],
            p=[0.28, 0.14, 0.14, 0.1, 0.12, 0.12, 0.1] if conv_domain
            else [0.34, 0.14, 0.16, 0.12, 0.14, 0.1])
        if kind in ("conv", "linear", "norm", "act", "pool"):
            src = _pick(rng, opens)
            if src is None:
                break
            if rng.random() < fanout_p and len(opens) < 4:
                opens.append(src)   # fan-out: somebody else may consume it too
            if kind == "conv":
                groups = 1
                if src.channels >= 4 and rng.random() < 0.3:
                    divisors = [g for g in (2, 4, src.channels)
                                if src.channels % g == 0 and g > 1]
                    groups = int(rng.choice(divisors))
                if groups > 1:
                    comp = conv2d(b.new_id("conv"), src.channels, src.channels,
                                  kernel=3, padding=1, groups=groups)
                    b.add(comp, [src])
                    opens.append(_Open(comp.comp_id, 0, src.channels, src.h,
                                       src.w, src.islands))
                else:
                    opens.append(add_conv(src))
            elif kind == "linear":
                opens.append(add_linear(src))
            elif kind == "norm":
                comp = batchnorm(b.new_id("bn"), src.channels)
                b.add(comp, [src])
                opens.append(_Open(comp.comp_id, 0, src.channels, src.h, src.w,
                                   src.islands))
            elif kind == "act":
                comp = activation(b.new_id("act"), src.channels, b.act_fn())
                b.add(comp, [src])
                opens.append(_Open(comp.comp_id, 0, src.channels, src.h, src.w,
                                   src.islands))
            else:  # pool
                if src.h is None or src.h % 2 or src.h < 2 or src.w % 2:
                    opens.append(src)
                    continue
                comp = pool(b.new_id("pool"), src.channels, 2, b.pool_op())
                b.add(comp, [src])
                opens.append(_Open(comp.comp_id, 0, src.channels, src.h // 2,
                                   src.w // 2, src.islands))
        elif kind == "eltwise":
            pair = _disjoint_pair(rng, opens)
            if pair is None:
                # manufacture the second operand from any open output
                src = _pick(rng, opens)
                if src is None:
                    break
                a = src
                other = _Open(a.comp_id, a.src_port, a.channels, a.h, a.w,
                              a.islands)
                bnd = add_conv(other, out_ch=a.channels, kernel=1) \
                    if conv_domain else add_linear(other, out_f=a.channels)
                pair = (a, bnd)
            a, c = pair
            op = "add" if rng.random() < 0.7 else "mul"
            comp = eltwise(b.new_id("elt"), a.channels, op)
            b.add(comp, [a, c])
            opens.append(_Open(comp.comp_id, 0, a.channels, a.h, a.w,
                               a.islands | c.islands))
        elif kind == "concat":
            pair = _disjoint_pair(
                rng, opens,
                same_shape=False) if not conv_domain else _concat_pair(rng, opens)
            if pair is None:
                continue
            a, c = pair
            comp = concat(b.new_id("cat"), [a.channels, c.channels])
            b.add(comp, [a, c])
            opens.append(_Open(comp.comp_id, 0, a.channels + c.channels,
                               a.h, a.w, a.islands | c.islands))
        else:  # split
            src = _pick(rng, opens, lambda o: o.channels >= 4)
            if src is None:
                continue
            cut = int(rng.integers(2, src.channels - 1))
            comp = split(b.new_id("split"), [cut, src.channels - cut])
            b.add(comp, [src])
            opens.append(_Open(comp.comp_id, 0, cut, src.h, src.w, src.islands))
            opens.append(_Open(comp.comp_id, 1, src.channels - cut, src.h,
                               src.w, src.islands))

    # endgame: unify spatial, force disjoint islands, merge, classify
    if conv_domain:
        while len({(o.h, o.w) for o in opens}) > 1:
            min_h = min(o.h for o in opens)
            for i, o in enumerate(opens):
                if o.h > min_h:
                    comp = pool(b.new_id("pool"), o.channels, 2, b.pool_op())
                    b.add(comp, [o])
                    opens[i] = _Open(comp.comp_id, 0, o.channels, o.h // 2,
                                     o.w // 2, o.islands)
                    break
    taken: set = set()
    for i, o in enumerate(opens):
        if o.islands & taken:
            opens[i] = add_conv(o, out_ch=o.channels, kernel=1) if conv_domain \
                else add_linear(o, out_f=o.channels)
        taken |= opens[i].islands
    if len(opens) > 1:
        comp = concat(b.new_id("cat"), [o.channels for o in opens])
        b.add(comp, list(opens))
        merged = _Open(comp.comp_id, 0, sum(o.channels for o in opens),
                       opens[0].h, opens[0].w,
                       frozenset().union(*(o.islands for o in opens)))
    else:
        merged = opens[0]
    if conv_domain:
        comp = flatten(b.new_id("flat"), merged.channels, merged.h * merged.w)
        b.add(comp, [merged])
        merged = _Open(comp.comp_id, 0, merged.channels * merged.h * merged.w,
                       None, None, merged.islands)
    head = linear(b.new_id("fc"), merged.channels, int(rng.integers(2, 6)))
    b.add(head, [merged])

    ir = NetworkIR(b.components, b.edges, input_shape, input_consumers)
    init_weights(ir, rng)
    return ir.check_valid()


def _concat_pair(rng, opens):
    """Two conv-domain opens with equal spatial dims and disjoint islands."""
    idxs = list(range(len(opens)))
    rng.shuffle(idxs)
    for i in idxs:
        for j in idxs:
            if i == j:
                continue
            a, b = opens[i], opens[j]
            if (a.h, a.w) != (b.h, b.w) or (a.islands & b.islands):
                continue
            for k in sorted((i, j), reverse=True):
                opens.pop(k)
            return a, b
    return None
