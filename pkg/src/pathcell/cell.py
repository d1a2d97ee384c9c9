"""Forward evaluation of the searchable recurrent cell.

One step combines the subject embedding s_t, relation embedding r_t and the
hidden state h_{t-1} through three operators: Os mixes (h_{t-1}, s_t), Or
mixes (a searched input, r_t) and produces the next hidden state, and Ov
mixes (a searched input, Or) into the step output v_t that scores the object.
No activation is applied after Ov.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .genotype import Activation, Combinator, Connection, Genotype, LinkKind
from .params import ParameterStore


def required_weights(g: Genotype) -> list[str]:
    """Weight-matrix names a genotype references (link weights are indexed
    by position; each gated combinator site owns a private Wa/Wb pair)."""
    names = {f"W{i + 1}" for i, k in enumerate(g.micro.links)
             if k == LinkKind.WEIGHT}
    for site, comb in (("s", g.macro.comb_s), ("r", g.macro.comb_r),
                       ("v", g.macro.comb_v)):
        if comb == Combinator.GATED:
            names |= {f"Wa_{site}", f"Wb_{site}"}
    return sorted(names)


def _link(tape, x: ad.Tensor, kind: LinkKind, wname: str,
          weights: dict[str, ad.Tensor]) -> ad.Tensor:
    if kind == LinkKind.IDENTITY:
        return x
    return ad.matmul(tape, x, weights[wname])


def _combine(tape, comb: Combinator, a: ad.Tensor, b: ad.Tensor, site: str,
             weights: dict[str, ad.Tensor]) -> ad.Tensor:
    if comb == Combinator.ADD:
        return ad.add(tape, a, b)
    if comb == Combinator.MUL:
        return ad.elementwise_mul(tape, a, b)
    if comb == Combinator.HERMITIAN:
        return ad.hermitian_product(tape, a, b)
    return ad.gated_combine(tape, a, b, weights[f"Wa_{site}"],
                            weights[f"Wb_{site}"])


def _activate(tape, act: Activation, x: ad.Tensor) -> ad.Tensor:
    if act == Activation.TANH:
        return ad.tanh(tape, x)
    if act == Activation.SIGMOID:
        return ad.sigmoid(tape, x)
    return x


def forward_cell(g: Genotype, weights: dict[str, ad.Tensor], s_t: ad.Tensor,
                 r_t: ad.Tensor, h_prev: ad.Tensor,
                 tape: ad.Tape) -> tuple[ad.Tensor, ad.Tensor]:
    """One recurrent step; returns (v_t, h_t). h_t is the Or output."""
    macro, micro = g.macro, g.micro
    need_os = Connection.OS_OUT in (macro.in_r, macro.in_v)
    o_s = None
    if need_os:
        pre = _combine(tape, macro.comb_s,
                       _link(tape, h_prev, micro.links[0], "W1", weights),
                       _link(tape, s_t, micro.links[1], "W2", weights),
                       "s", weights)
        o_s = _activate(tape, micro.act_s, pre)

    def pick(conn: Connection) -> ad.Tensor | None:
        if conn == Connection.H_PREV:
            return h_prev
        if conn == Connection.OS_OUT:
            return o_s
        if conn == Connection.S_CUR:
            return s_t
        return None  # ZERO

    def linked_pick(conn, kind, wname, like: ad.Tensor) -> ad.Tensor:
        x = pick(conn)
        if x is None:
            return ad.zeros_like_input(like.value.shape)
        return _link(tape, x, kind, wname, weights)

    o_r = _activate(tape, micro.act_r,
                    _combine(tape, macro.comb_r,
                             linked_pick(macro.in_r, micro.links[2], "W3", r_t),
                             _link(tape, r_t, micro.links[3], "W4", weights),
                             "r", weights))
    h_t = o_r
    v_t = _combine(tape, macro.comb_v,
                   linked_pick(macro.in_v, micro.links[4], "W5", o_r),
                   _link(tape, o_r, micro.links[5], "W6", weights),
                   "v", weights)
    return v_t, h_t


def constant_leaves(store: ParameterStore) -> dict[str, ad.Tensor]:
    """Parameter tensors that do not request gradients (for evaluation)."""
    out = {}
    for name, arr in store.tensors.items():
        t = ad.Tensor.__new__(ad.Tensor)
        t.value = arr
        t.grad = None
        t.requires_grad = False
        t.name = name
        out[name] = t
    return out


def single_step_outputs(g: Genotype, store: ParameterStore, s_ids: np.ndarray,
                        r_ids: np.ndarray) -> np.ndarray:
    """Step-1 cell outputs for (s, r) query batches, with h0 = s1."""
    leaves = constant_leaves(store)
    tape = ad.Tape()
    s = ad.embedding_lookup(tape, leaves["entities"], np.asarray(s_ids))
    r = ad.embedding_lookup(tape, leaves["relations"], np.asarray(r_ids))
    v, _ = forward_cell(g, leaves, s, r, s, tape)
    return v.value
