"""Genomic-guided co-attention: gene tokens query the patch bag."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from himt.autodiff import Node, Parameter, concat_cols, const, matmul, scale, slice_cols, softmax_rows, transpose
from himt.errors import ContractError, ShapeError
from himt.layers import uniform_weight


@dataclass
class GcaParams:
    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    heads: int = 1

    @classmethod
    def init(cls, rng: np.random.Generator, d_k: int, heads: int = 1, prefix: str = "gca") -> "GcaParams":
        if d_k % heads:
            raise ContractError(f"d_k={d_k} not divisible by heads={heads}")
        return cls(uniform_weight(rng, d_k, d_k, f"{prefix}.w_q"),
                   uniform_weight(rng, d_k, d_k, f"{prefix}.w_k"),
                   uniform_weight(rng, d_k, d_k, f"{prefix}.w_v"), heads)

    def parameters(self) -> list[Parameter]:
        return [self.w_q, self.w_k, self.w_v]


@dataclass
class GcaOutput:
    a_coa: Node     # N x M, head-averaged when heads > 1
    h_hat: Node     # N x d_k
    logits: Node    # N x M pre-softmax scores (first head)


def gca_forward(g_bag, h_bag, params: GcaParams) -> GcaOutput:
    """Map M patch rows to N gene-guided concepts.

    Row convention: queries are ``G @ W_q`` (N x d_k), keys ``H @ W_k`` and
    values ``H @ W_v`` (M x d_k).
    """
    g, h = const(g_bag), const(h_bag)
    d_k = params.w_q.shape[0]
    if g.shape[1] != d_k or h.shape[1] != d_k:
        raise ShapeError(f"gca: G {g.shape} and H {h.shape} must both have width {d_k}")
    if g.shape[0] < 1 or h.shape[0] < 1:
        raise ContractError("gca needs at least one query and one instance")
    q = matmul(g, params.w_q)
    k = matmul(h, params.w_k)
    v = matmul(h, params.w_v)
    heads = params.heads
    d_head = d_k // heads
    outs, attns, first_logits = [], [], None
    for i in range(heads):
        lo, hi = i * d_head, (i + 1) * d_head
        qi = q if heads == 1 else slice_cols(q, lo, hi)
        ki = k if heads == 1 else slice_cols(k, lo, hi)
        vi = v if heads == 1 else slice_cols(v, lo, hi)
        logits = scale(matmul(qi, transpose(ki)), 1.0 / np.sqrt(d_head))
        a = softmax_rows(logits)
        outs.append(matmul(a, vi))
        attns.append(a)
        if first_logits is None:
            first_logits = logits
    if heads == 1:
        return GcaOutput(attns[0], outs[0], first_logits)
    a_mean = Node(np.mean([a.value for a in attns], axis=0))
    return GcaOutput(a_mean, concat_cols(outs), first_logits)
