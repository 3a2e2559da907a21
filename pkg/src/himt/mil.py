"""Set-based MIL transformers, gated attention pooling and the full HiMT model."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from himt.autodiff import (Node, Parameter, concat_cols, const, dropout, matmul, mul, relu, scale,
                           sigmoid, softmax_rows, tanh, transpose)
from himt.bags import MultimodalBag, embed_gene_sets
from himt.coattention import GcaParams, gca_forward
from himt.errors import ContractError, FormatError, PathError, ShapeError
from himt.layers import linear, uniform_weight, zero_bias

CHECKPOINT_HEADER = "HIMT-CHECKPOINT 1"


# ---------------------------------------------------------------- encoder


@dataclass
class EncoderParams:
    """One encoder block: instance FC (phi) followed by set self-attention (psi)."""

    w_phi: Parameter
    b_phi: Parameter
    w_q: Parameter
    w_k: Parameter
    w_v: Parameter

    @classmethod
    def init(cls, rng, d: int, prefix: str) -> "EncoderParams":
        return cls(uniform_weight(rng, d, d, f"{prefix}.phi.w"), zero_bias(d, f"{prefix}.phi.b"),
                   uniform_weight(rng, d, d, f"{prefix}.attn.w_q"),
                   uniform_weight(rng, d, d, f"{prefix}.attn.w_k"),
                   uniform_weight(rng, d, d, f"{prefix}.attn.w_v"))

    def parameters(self) -> list[Parameter]:
        return [self.w_phi, self.b_phi, self.w_q, self.w_k, self.w_v]


def self_attention_set(h, w_q: Parameter, w_k: Parameter, w_v: Parameter) -> Node:
    """softmax(Q K^T / sqrt(d)) V over the rows of ``h``; permutation-equivariant."""
    h = const(h)
    if h.shape[0] < 1:
        raise ContractError("self-attention needs at least one instance")
    if h.shape[1] != w_q.shape[0]:
        raise ShapeError(f"self-attention: input width {h.shape[1]} vs projection {w_q.shape}")
    q, k, v = matmul(h, w_q), matmul(h, w_k), matmul(h, w_v)
    a = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / np.sqrt(w_q.shape[1])))
    return matmul(a, v)


def encoder_forward(h, blocks: list[EncoderParams], drop: float = 0.0, rng=None) -> Node:
    x = const(h)
    for p in blocks:
        x = dropout(relu(linear(x, p.w_phi, p.b_phi)), drop, rng)
        x = self_attention_set(x, p.w_q, p.w_k, p.w_v)
    return x


# ---------------------------------------------------------------- pooling


@dataclass
class PoolParams:
    """Gated attention pooling (Ilse et al. style) plus the bag head.

    Stored in row convention: ``v_rho``/``u_rho`` are d_in x d_attn,
    ``w_rho`` is d_attn x 1, ``w_phi`` is d_in x d_v and ``w_zeta`` d_v x d_out.
    """

    w_phi: Parameter
    v_rho: Parameter
    u_rho: Parameter
    w_rho: Parameter
    w_zeta: Parameter

    @classmethod
    def init(cls, rng, d: int, d_attn: int, d_out: int, prefix: str) -> "PoolParams":
        return cls(uniform_weight(rng, d, d, f"{prefix}.w_phi"),
                   uniform_weight(rng, d, d_attn, f"{prefix}.v_rho"),
                   uniform_weight(rng, d, d_attn, f"{prefix}.u_rho"),
                   uniform_weight(rng, d_attn, 1, f"{prefix}.w_rho"),
                   uniform_weight(rng, d, d_out, f"{prefix}.w_zeta"))

    def parameters(self) -> list[Parameter]:
        return [self.w_phi, self.v_rho, self.u_rho, self.w_rho, self.w_zeta]


def gated_attention_pool(h, params: PoolParams) -> tuple[Node, Node]:
    """Return (bag feature 1 x d_v, attention weights 1 x m)."""
    h = const(h)
    if h.shape[0] < 1:
        raise ContractError("cannot pool an empty bag")
    gate = mul(tanh(matmul(h, params.v_rho)), sigmoid(matmul(h, params.u_rho)))
    scores = transpose(matmul(gate, params.w_rho))       # 1 x m
    a = softmax_rows(scores)
    return matmul(a, matmul(h, params.w_phi)), a


def bag_head(feature, w_zeta: Parameter) -> Node:
    feature = const(feature)
    if feature.shape[1] != w_zeta.shape[0]:
        raise ShapeError(f"bag head: feature {feature.shape} vs W_zeta {w_zeta.shape}")
    return matmul(feature, w_zeta)


# ---------------------------------------------------------------- fusion


@dataclass
class FusionParams:
    layers: list[tuple[Parameter, Parameter]]

    @classmethod
    def init(cls, rng, d_in: int, hidden: tuple[int, ...], n_bins: int, prefix: str = "risk") -> "FusionParams":
        sizes = (d_in, *hidden, n_bins)
        return cls([(uniform_weight(rng, a, b, f"{prefix}.{i}.w"), zero_bias(b, f"{prefix}.{i}.b"))
                    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))])

    def parameters(self) -> list[Parameter]:
        return [p for pair in self.layers for p in pair]


def fuse_and_risk(h_feature, g_feature, params: FusionParams, drop: float = 0.0, rng=None) -> Node:
    """Concatenate the two bag features and map them to hazard logits."""
    x = concat_cols([const(h_feature), const(g_feature)])
    if x.shape[1] != params.layers[0][0].shape[0]:
        raise ShapeError(f"fusion expects width {params.layers[0][0].shape[0]}, got {x.shape[1]}")
    for i, (w, b) in enumerate(params.layers):
        x = linear(x, w, b)
        if i < len(params.layers) - 1:
            x = dropout(relu(x), drop, rng)
    return x


# ---------------------------------------------------------------- model


@dataclass
class ModelConfig:
    d_in: int
    gene_set_sizes: tuple[int, ...]
    d_k: int = 256
    d_attn: int = 64
    n_bins: int = 4
    heads: int = 1
    enc_layers: int = 1
    dropout: float = 0.25


@dataclass
class HiMT:
    config: ModelConfig
    input_proj: Parameter
    gene_w: list[Parameter]
    gene_b: list[Parameter]
    gca: GcaParams
    enc_h: list[EncoderParams]
    enc_g: list[EncoderParams]
    pool_h: PoolParams
    pool_g: PoolParams
    fusion: FusionParams
    _params: list[Parameter] = field(init=False, repr=False)

    def __post_init__(self):
        self._params = [self.input_proj, *self.gene_w, *self.gene_b, *self.gca.parameters()]
        for blk in (*self.enc_h, *self.enc_g):
            self._params += blk.parameters()
        self._params += self.pool_h.parameters() + self.pool_g.parameters() + self.fusion.parameters()
        names = [p.name for p in self._params]
        if len(set(names)) != len(names):
            raise ContractError("duplicate parameter names")

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "HiMT":
        d = config.d_k
        proj = uniform_weight(rng, config.d_in, d, "input_proj")
        gene_w = [uniform_weight(rng, n, d, f"gene.{i}.w") for i, n in enumerate(config.gene_set_sizes)]
        gene_b = [zero_bias(d, f"gene.{i}.b") for i in range(len(config.gene_set_sizes))]
        gca = GcaParams.init(rng, d, config.heads)
        enc_h = [EncoderParams.init(rng, d, f"enc_h.{i}") for i in range(config.enc_layers)]
        enc_g = [EncoderParams.init(rng, d, f"enc_g.{i}") for i in range(config.enc_layers)]
        pool_h = PoolParams.init(rng, d, config.d_attn, d, "pool_h")
        pool_g = PoolParams.init(rng, d, config.d_attn, d, "pool_g")
        fusion = FusionParams.init(rng, 2 * d, (d,), config.n_bins)
        return cls(config, proj, gene_w, gene_b, gca, enc_h, enc_g, pool_h, pool_g, fusion)

    def parameters(self) -> list[Parameter]:
        return list(self._params)

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self._params}

    def forward(self, bag: MultimodalBag, rng: np.random.Generator | None = None) -> Node:
        """Hazard logits (1 x n_bins). Passing ``rng`` enables dropout."""
        return himt_forward(bag, self, rng)

    # -- checkpoint ---------------------------------------------------------

    def save(self, path: str | Path, meta: dict[str, str] | None = None) -> None:
        """Text checkpoint: header, ``#meta`` lines, then per parameter a
        ``name rows cols`` line followed by ``rows`` lines of repr floats."""
        lines = [CHECKPOINT_HEADER]
        cfg = self.config
        lines.append(f"#config d_in={cfg.d_in} gene_set_sizes={','.join(map(str, cfg.gene_set_sizes))} "
                     f"d_k={cfg.d_k} d_attn={cfg.d_attn} n_bins={cfg.n_bins} heads={cfg.heads} "
                     f"enc_layers={cfg.enc_layers} dropout={cfg.dropout!r}")
        for k, v in (meta or {}).items():
            lines.append(f"#meta {k}={v}")
        for p in self._params:
            lines.append(f"{p.name} {p.shape[0]} {p.shape[1]}")
            lines.extend(" ".join(repr(float(x)) for x in row) for row in p.value)
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> tuple["HiMT", dict[str, str]]:
        path = Path(path)
        if not path.exists():
            raise PathError(f"checkpoint not found: {path}")
        lines = path.read_text().splitlines()
        if not lines or lines[0] != CHECKPOINT_HEADER:
            raise FormatError(f"{path}: not a checkpoint (bad header)")
        cfg_kv, meta, i = {}, {}, 1
        while i < len(lines) and lines[i].startswith("#"):
            tag, _, rest = lines[i].partition(" ")
            if tag == "#config":
                cfg_kv = dict(kv.split("=", 1) for kv in rest.split())
            elif tag == "#meta":
                k, _, v = rest.partition("=")
                meta[k] = v
            i += 1
        if not cfg_kv:
            raise FormatError(f"{path}: missing #config line")
        config = ModelConfig(
            d_in=int(cfg_kv["d_in"]),
            gene_set_sizes=tuple(int(x) for x in cfg_kv["gene_set_sizes"].split(",") if x),
            d_k=int(cfg_kv["d_k"]), d_attn=int(cfg_kv["d_attn"]), n_bins=int(cfg_kv["n_bins"]),
            heads=int(cfg_kv["heads"]), enc_layers=int(cfg_kv["enc_layers"]),
            dropout=float(cfg_kv["dropout"]))
        model = cls.init(config, np.random.default_rng(0))
        params = model.named_parameters()
        seen = set()
        while i < len(lines):
            try:
                name, r, c = lines[i].split()
                r, c = int(r), int(c)
                if r == 0:
                    vals = np.zeros((0, c))
                else:
                    vals = np.array([[float(x) for x in lines[i + 1 + j].split()] for j in range(r)])
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{i + 1}: malformed parameter block") from None
            if name not in params or params[name].shape != (r, c) or vals.shape != (r, c):
                raise FormatError(f"{path}:{i + 1}: unexpected parameter {name} {r}x{c}")
            params[name].value[...] = vals
            seen.add(name)
            i += 1 + r
        if seen != set(params):
            raise FormatError(f"{path}: missing parameters {sorted(set(params) - seen)}")
        return model, meta


def himt_forward(bag: MultimodalBag, model: HiMT, rng: np.random.Generator | None = None) -> Node:
    cfg = model.config
    drop = cfg.dropout if rng is not None else 0.0
    g_bag = embed_gene_sets(bag.gene_sets, model.gene_w, model.gene_b)
    h_bag = linear(const(bag.instances), model.input_proj)
    h_hat = gca_forward(g_bag, h_bag, model.gca).h_hat
    h_enc = encoder_forward(h_hat, model.enc_h, drop, rng)
    g_enc = encoder_forward(g_bag, model.enc_g, drop, rng)
    h_feat, _ = gated_attention_pool(h_enc, model.pool_h)
    g_feat, _ = gated_attention_pool(g_enc, model.pool_g)
    return fuse_and_risk(bag_head(h_feat, model.pool_h.w_zeta), bag_head(g_feat, model.pool_g.w_zeta),
                         model.fusion, drop, rng)
