"""Transformer encoder with MLM / triple-classification / title-matching heads.

Forward and backward passes are written out in numpy so gradients are exact
and checkable against finite differences. The layout follows post-layer-norm
BERT: summed token/position/segment embeddings with an embedding layer norm,
then L blocks of multi-head self-attention and a GELU feed-forward, each with
a residual connection and layer norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import NUM_SPECIAL
from .examples import PretrainExample

NEG_INF = -1e9


class ModelError(ValueError):
    pass


class NonFiniteGradientError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 4
    ffn_mult: int = 4
    max_seq_len: int = 512
    n_segments: int = 3
    tie_mlm: bool = True
    dtype: str = "float32"
    init_std: float = 0.02
    # Query/key projections start wider than the rest: near-zero attention
    # logits are a flat region the binary heads cannot escape at desk scale.
    attn_init_std: float = 0.1
    # Position table starts from a scaled sinusoidal pattern so offset-selective
    # attention (an anchor binding to its own following triple) is reachable.
    pos_init: str = "sinusoidal"  # or "normal"
    pos_init_scale: float = 0.05
    ln_eps: float = 1e-5

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ModelError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.vocab_size < NUM_SPECIAL:
            raise ModelError("vocab_size smaller than the special-token block")
        if self.dtype not in ("float32", "float64"):
            raise ModelError(f"unsupported dtype {self.dtype}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def d_ffn(self) -> int:
        return self.d_model * self.ffn_mult

    def to_json(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "ffn_mult": self.ffn_mult,
            "max_seq_len": self.max_seq_len,
            "n_segments": self.n_segments,
            "tie_mlm": self.tie_mlm,
            "dtype": self.dtype,
            "init_std": self.init_std,
            "ln_eps": self.ln_eps,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def sinusoidal_table(n_pos: int, d: int) -> np.ndarray:
    pos = np.arange(n_pos, dtype=np.float64)[:, None]
    dim = np.arange(d // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * dim / d)
    table = np.zeros((n_pos, d))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def param_names(config: ModelConfig) -> list[str]:
    """Declaration order of all parameter tensors; fixes checkpoint layout."""
    names = ["tok_emb", "pos_emb", "seg_emb", "emb_ln_g", "emb_ln_b"]
    for i in range(config.n_layers):
        p = f"layers.{i}."
        names += [
            p + "q_w", p + "q_b", p + "k_w", p + "k_b", p + "v_w", p + "v_b",
            p + "o_w", p + "o_b", p + "ln1_g", p + "ln1_b",
            p + "ffn_w1", p + "ffn_b1", p + "ffn_w2", p + "ffn_b2",
            p + "ln2_g", p + "ln2_b",
        ]
    names += ["mlm_w", "mlm_b", "mlm_ln_g", "mlm_ln_b"]
    if not config.tie_mlm:
        names.append("mlm_out_w")
    names += ["mlm_out_b", "tc_w", "tc_b", "tmt_w", "tmt_b"]
    return names


def init_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    config.validate()
    rng = np.random.default_rng(seed)
    d, v = config.d_model, config.vocab_size
    dt = config.np_dtype

    def normal(*shape):
        return rng.normal(0.0, config.init_std, size=shape).astype(dt)

    def attn_normal(*shape):
        return rng.normal(0.0, config.attn_init_std, size=shape).astype(dt)

    def zeros(*shape):
        return np.zeros(shape, dtype=dt)

    def ones(*shape):
        return np.ones(shape, dtype=dt)

    if config.pos_init == "sinusoidal":
        pos_emb = (sinusoidal_table(config.max_seq_len, d) * config.pos_init_scale).astype(dt)
    elif config.pos_init == "normal":
        pos_emb = normal(config.max_seq_len, d)
    else:
        raise ModelError(f"unknown pos_init {config.pos_init!r}")
    params: dict[str, np.ndarray] = {
        "tok_emb": normal(v, d),
        "pos_emb": pos_emb,
        "seg_emb": normal(config.n_segments, d),
        "emb_ln_g": ones(d),
        "emb_ln_b": zeros(d),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        params[p + "q_w"] = attn_normal(d, d)
        params[p + "q_b"] = zeros(d)
        params[p + "k_w"] = attn_normal(d, d)
        params[p + "k_b"] = zeros(d)
        params[p + "v_w"] = normal(d, d)
        params[p + "v_b"] = zeros(d)
        params[p + "o_w"] = normal(d, d)
        params[p + "o_b"] = zeros(d)
        params[p + "ln1_g"] = ones(d)
        params[p + "ln1_b"] = zeros(d)
        params[p + "ffn_w1"] = normal(d, config.d_ffn)
        params[p + "ffn_b1"] = zeros(config.d_ffn)
        params[p + "ffn_w2"] = normal(config.d_ffn, d)
        params[p + "ffn_b2"] = zeros(d)
        params[p + "ln2_g"] = ones(d)
        params[p + "ln2_b"] = zeros(d)
    params["mlm_w"] = normal(d, d)
    params["mlm_b"] = zeros(d)
    params["mlm_ln_g"] = ones(d)
    params["mlm_ln_b"] = zeros(d)
    if not config.tie_mlm:
        params["mlm_out_w"] = normal(d, v)
    params["mlm_out_b"] = zeros(v)
    params["tc_w"] = normal(d, 2)
    params["tc_b"] = zeros(2)
    params["tmt_w"] = normal(d, 2)
    params["tmt_b"] = zeros(2)
    assert list(params.keys()) == param_names(config)
    return params


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """Padded example batch plus gathered head positions and loss weights.

    Per-example losses are means over that example's own masked positions /
    triples, so position weights are 1 / (B * n_b); the batch loss is then the
    mean over examples of the per-example joint loss.
    """

    ids: np.ndarray          # (B, L) int
    seg: np.ndarray          # (B, L) int
    mask: np.ndarray         # (B, L) 1.0 = real token
    mlm_b: np.ndarray
    mlm_i: np.ndarray
    mlm_label: np.ndarray
    mlm_weight: np.ndarray
    tc_b: np.ndarray
    tc_i: np.ndarray
    tc_label: np.ndarray
    tc_weight: np.ndarray
    tmt_b: np.ndarray
    tmt_i: np.ndarray
    tmt_label: np.ndarray
    tmt_weight: np.ndarray
    size: int


def make_batch(examples: list[PretrainExample], dtype=np.float32) -> Batch:
    b = len(examples)
    if b == 0:
        raise ModelError("empty batch")
    max_len = max(len(ex.input_ids) for ex in examples)
    ids = np.zeros((b, max_len), dtype=np.int64)
    seg = np.zeros((b, max_len), dtype=np.int64)
    mask = np.zeros((b, max_len), dtype=dtype)
    mlm_b, mlm_i, mlm_label, mlm_w = [], [], [], []
    tc_b, tc_i, tc_label, tc_w = [], [], [], []
    tmt_b, tmt_i, tmt_label, tmt_w = [], [], [], []
    for k, ex in enumerate(examples):
        n = len(ex.input_ids)
        ids[k, :n] = ex.input_ids
        seg[k, :n] = ex.layout.seg_ids
        mask[k, :n] = 1.0
        if ex.mlm_labels:
            w = 1.0 / (b * len(ex.mlm_labels))
            for pos, orig in ex.mlm_labels:
                mlm_b.append(k)
                mlm_i.append(pos)
                mlm_label.append(orig)
                mlm_w.append(w)
        if ex.tc_labels:
            w = 1.0 / (b * len(ex.tc_labels))
            for (pos, _span), label in zip(ex.layout.triples, ex.tc_labels):
                tc_b.append(k)
                tc_i.append(pos)
                tc_label.append(label)
                tc_w.append(w)
        if ex.tmt_label is not None and ex.layout.sep0_pos is not None:
            tmt_b.append(k)
            tmt_i.append(ex.layout.sep0_pos)
            tmt_label.append(ex.tmt_label)
            tmt_w.append(1.0 / b)
    return Batch(
        ids=ids,
        seg=seg,
        mask=mask,
        mlm_b=np.asarray(mlm_b, dtype=np.int64),
        mlm_i=np.asarray(mlm_i, dtype=np.int64),
        mlm_label=np.asarray(mlm_label, dtype=np.int64),
        mlm_weight=np.asarray(mlm_w, dtype=np.float64),
        tc_b=np.asarray(tc_b, dtype=np.int64),
        tc_i=np.asarray(tc_i, dtype=np.int64),
        tc_label=np.asarray(tc_label, dtype=np.int64),
        tc_weight=np.asarray(tc_w, dtype=np.float64),
        tmt_b=np.asarray(tmt_b, dtype=np.int64),
        tmt_i=np.asarray(tmt_i, dtype=np.int64),
        tmt_label=np.asarray(tmt_label, dtype=np.int64),
        tmt_weight=np.asarray(tmt_w, dtype=np.float64),
        size=b,
    )


# ---------------------------------------------------------------------------
# Primitive forward/backward pieces
# ---------------------------------------------------------------------------

# Tanh-form GELU (the standard transformer approximation); its derivative is
# exact in closed form, which is what the finite-difference check needs.
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu_forward(x: np.ndarray):
    t = np.tanh(_GELU_C * (x + _GELU_A * x * x * x))
    return 0.5 * x * (1.0 + t), t


def gelu(x: np.ndarray) -> np.ndarray:
    return gelu_forward(x)[0]


def gelu_grad(x: np.ndarray, t: np.ndarray | None = None) -> np.ndarray:
    if t is None:
        t = np.tanh(_GELU_C * (x + _GELU_A * x * x * x))
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def layer_norm(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv
    return xn * g + b, (xn, inv)


def layer_norm_backward(dout, cache, g):
    xn, inv = cache
    d = dout.shape[-1]
    dg = (dout * xn).reshape(-1, d).sum(axis=0)
    db = dout.reshape(-1, d).sum(axis=0)
    dxn = dout * g
    m1 = dxn.mean(axis=-1, keepdims=True)
    m2 = (dxn * xn).mean(axis=-1, keepdims=True)
    dx = inv * (dxn - m1 - xn * m2)
    return dx, dg, db


def softmax(x: np.ndarray, axis=-1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


@dataclass
class ForwardResult:
    hidden: np.ndarray            # (B, L, d)
    mlm_logits: np.ndarray        # (M, V)
    tc_logits: np.ndarray         # (K, 2)
    tmt_logits: np.ndarray        # (T, 2)
    cache: dict | None = field(default=None, repr=False)


def encode(params, config: ModelConfig, batch: Batch, want_cache: bool = False):
    """Run the encoder stack; returns hidden states (B, L, d) and (optionally)
    the activation cache needed for the backward pass.

    Internally the token axis is kept flat as (B*L, d) so each projection is a
    single GEMM; attention reshapes to (B, H, L, dh) views.
    """
    dt = config.np_dtype
    ids, seg, mask = batch.ids, batch.seg, batch.mask
    b, l = ids.shape
    if l > config.max_seq_len:
        raise ModelError(f"sequence length {l} exceeds max_seq_len {config.max_seq_len}")
    if int(ids.max(initial=0)) >= config.vocab_size:
        raise ModelError("token id outside the model vocabulary")
    d, h = config.d_model, config.n_heads
    dh = d // h
    scale = 1.0 / math.sqrt(dh)
    ids_flat = ids.reshape(-1)
    seg_flat = seg.reshape(-1)

    emb = params["tok_emb"][ids_flat] + params["seg_emb"][seg_flat]
    emb.reshape(b, l, d)[:] += params["pos_emb"][:l][None]
    x, emb_ln_cache = layer_norm(emb, params["emb_ln_g"], params["emb_ln_b"], config.ln_eps)

    attn_bias = ((1.0 - mask) * NEG_INF)[:, None, None, :].astype(dt)

    def split_heads(m):  # (B*L, d) -> contiguous (B, H, L, dh)
        return np.ascontiguousarray(m.reshape(b, l, h, dh).transpose(0, 2, 1, 3))

    layer_caches = []
    for i in range(config.n_layers):
        p = f"layers.{i}."
        q = split_heads(x @ params[p + "q_w"] + params[p + "q_b"])
        k = split_heads(x @ params[p + "k_w"] + params[p + "k_b"])
        v = split_heads(x @ params[p + "v_w"] + params[p + "v_b"])
        scores = q @ k.transpose(0, 1, 3, 2)
        scores *= scale
        scores += attn_bias
        probs = softmax(scores)
        ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(b * l, d)
        attn_out = ctx @ params[p + "o_w"] + params[p + "o_b"]
        attn_out += x
        y, ln1_cache = layer_norm(attn_out, params[p + "ln1_g"], params[p + "ln1_b"], config.ln_eps)
        ffn_pre = y @ params[p + "ffn_w1"] + params[p + "ffn_b1"]
        act, gelu_t = gelu_forward(ffn_pre)
        ffn_out = act @ params[p + "ffn_w2"] + params[p + "ffn_b2"]
        ffn_out += y
        z, ln2_cache = layer_norm(ffn_out, params[p + "ln2_g"], params[p + "ln2_b"], config.ln_eps)
        if want_cache:
            layer_caches.append(
                {"x": x, "q": q, "k": k, "v": v, "probs": probs, "ctx": ctx,
                 "ln1": ln1_cache, "y": y, "ffn_pre": ffn_pre, "gelu_t": gelu_t, "act": act,
                 "ln2": ln2_cache}
            )
        x = z

    cache = None
    if want_cache:
        cache = {"emb_ln": emb_ln_cache, "layers": layer_caches,
                 "ids": ids_flat, "seg": seg_flat, "b": b, "l": l}
    return x.reshape(b, l, d), cache


def forward_batch(params, config: ModelConfig, batch: Batch, want_cache: bool = False) -> ForwardResult:
    hidden, cache = encode(params, config, batch, want_cache)

    # MLM head at masked positions: dense + GELU + layer norm + (tied) decoder.
    g = hidden[batch.mlm_b, batch.mlm_i]
    mlm_pre = g @ params["mlm_w"] + params["mlm_b"]
    mlm_act = gelu(mlm_pre)
    mlm_h, mlm_ln_cache = layer_norm(mlm_act, params["mlm_ln_g"], params["mlm_ln_b"], config.ln_eps)
    out_w = params["tok_emb"].T if config.tie_mlm else params["mlm_out_w"]
    mlm_logits = mlm_h @ out_w + params["mlm_out_b"]

    tc_h = hidden[batch.tc_b, batch.tc_i]
    tc_logits = tc_h @ params["tc_w"] + params["tc_b"]
    tmt_h = hidden[batch.tmt_b, batch.tmt_i]
    tmt_logits = tmt_h @ params["tmt_w"] + params["tmt_b"]

    if want_cache:
        cache["mlm_g"] = g
        cache["mlm_pre"] = mlm_pre
        cache["mlm_act"] = mlm_act
        cache["mlm_ln"] = mlm_ln_cache
        cache["mlm_h"] = mlm_h
        cache["tc_h"] = tc_h
        cache["tmt_h"] = tmt_h
    return ForwardResult(hidden=hidden, mlm_logits=mlm_logits, tc_logits=tc_logits,
                         tmt_logits=tmt_logits, cache=cache)


@dataclass
class EncoderOutput:
    """Hidden states of one example with the views the three heads read."""

    hidden: np.ndarray  # (L, d)
    example: PretrainExample

    @property
    def text_states(self) -> np.ndarray:
        s, e = self.example.layout.text_span
        return self.hidden[s:e]

    @property
    def heading_state(self) -> np.ndarray | None:
        pos = self.example.layout.sep0_pos
        return None if pos is None else self.hidden[pos]

    @property
    def triple_states(self) -> np.ndarray:
        seps = self.example.layout.sep_positions()
        return self.hidden[seps] if seps else np.zeros((0, self.hidden.shape[1]))


def forward(params, config: ModelConfig, example: PretrainExample):
    """Single-example convenience wrapper.

    Returns (EncoderOutput, mlm logits at masked positions, per-triple tc
    logits, tmt logits at [SEP0]).
    """
    batch = make_batch([example], dtype=config.np_dtype)
    res = forward_batch(params, config, batch)
    out = EncoderOutput(hidden=res.hidden[0], example=example)
    return out, res.mlm_logits, res.tc_logits, res.tmt_logits


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


@dataclass
class LossBreakdown:
    total: float
    mlm: float
    tc: float
    tmt: float


def _weighted_nll(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    """Mean-weighted NLL plus its gradient wrt the logits (already weighted).

    Accumulated in float64 regardless of the model dtype so the loss
    decomposition identity holds tightly.
    """
    if logits.shape[0] == 0:
        return 0.0, np.zeros_like(logits, dtype=np.float64)
    logits = logits.astype(np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    nll = -(logp[np.arange(len(labels)), labels] * weights).sum()
    probs = np.exp(logp)
    dlogits = probs * weights[:, None]
    dlogits[np.arange(len(labels)), labels] -= weights
    return float(nll), dlogits


def joint_loss(result: ForwardResult, batch: Batch, lam: float, mu: float):
    """Joint objective: mean MLM NLL + lam * mean TC NLL + mu * TMT NLL.

    Heads with no support contribute zero. Returns the breakdown plus the
    (already task-weighted) logit gradients for the backward pass.
    """
    l_mlm, d_mlm = _weighted_nll(result.mlm_logits, batch.mlm_label, batch.mlm_weight)
    l_tc, d_tc = _weighted_nll(result.tc_logits, batch.tc_label, batch.tc_weight)
    l_tmt, d_tmt = _weighted_nll(result.tmt_logits, batch.tmt_label, batch.tmt_weight)
    total = l_mlm + lam * l_tc + mu * l_tmt
    grads = (d_mlm, lam * d_tc, mu * d_tmt)
    return LossBreakdown(total=total, mlm=l_mlm, tc=l_tc, tmt=l_tmt), grads


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def encoder_backward(params, config: ModelConfig, cache, d_hidden):
    """Backpropagate d_hidden (B, L, d) through the encoder stack into a
    gradient dict over the encoder parameters."""
    grads: dict[str, np.ndarray] = {}
    b, l, d = d_hidden.shape
    h = config.n_heads
    dh = d // h
    scale = 1.0 / math.sqrt(dh)
    dx = d_hidden.reshape(b * l, d)

    for i in reversed(range(config.n_layers)):
        p = f"layers.{i}."
        c = cache["layers"][i]
        x, y = c["x"], c["y"]

        dz_pre, dg2, db2 = layer_norm_backward(dx, c["ln2"], params[p + "ln2_g"])
        grads[p + "ln2_g"], grads[p + "ln2_b"] = dg2, db2
        dy = dz_pre.copy()
        d_ffn_out = dz_pre
        grads[p + "ffn_w2"] = c["act"].T @ d_ffn_out
        grads[p + "ffn_b2"] = d_ffn_out.sum(axis=0)
        d_act = d_ffn_out @ params[p + "ffn_w2"].T
        d_ffn_pre = d_act * gelu_grad(c["ffn_pre"], c["gelu_t"])
        grads[p + "ffn_w1"] = y.T @ d_ffn_pre
        grads[p + "ffn_b1"] = d_ffn_pre.sum(axis=0)
        dy += d_ffn_pre @ params[p + "ffn_w1"].T

        dy_pre, dg1, db1 = layer_norm_backward(dy, c["ln1"], params[p + "ln1_g"])
        grads[p + "ln1_g"], grads[p + "ln1_b"] = dg1, db1
        dx_new = dy_pre.copy()
        d_attn_out = dy_pre
        grads[p + "o_w"] = c["ctx"].T @ d_attn_out
        grads[p + "o_b"] = d_attn_out.sum(axis=0)
        d_ctx = np.ascontiguousarray(
            (d_attn_out @ params[p + "o_w"].T).reshape(b, l, h, dh).transpose(0, 2, 1, 3)
        )

        probs, q, k, v = c["probs"], c["q"], c["k"], c["v"]
        d_probs = d_ctx @ v.transpose(0, 1, 3, 2)
        dv = probs.transpose(0, 1, 3, 2) @ d_ctx
        d_scores = probs * (d_probs - (d_probs * probs).sum(axis=-1, keepdims=True))
        dq = (d_scores @ k) * scale
        dk = (d_scores.transpose(0, 1, 3, 2) @ q) * scale

        for name, dmat in (("q", dq), ("k", dk), ("v", dv)):
            flat = np.ascontiguousarray(dmat.transpose(0, 2, 1, 3)).reshape(b * l, d)
            grads[p + name + "_w"] = x.T @ flat
            grads[p + name + "_b"] = flat.sum(axis=0)
            dx_new += flat @ params[p + name + "_w"].T
        dx = dx_new

    d_emb, dg0, db0 = layer_norm_backward(dx, cache["emb_ln"], params["emb_ln_g"])
    grads["emb_ln_g"], grads["emb_ln_b"] = dg0, db0

    d_tok = np.zeros_like(params["tok_emb"])
    np.add.at(d_tok, cache["ids"], d_emb)
    grads["tok_emb"] = d_tok
    d_pos = np.zeros_like(params["pos_emb"])
    d_pos[:l] = d_emb.reshape(b, l, d).sum(axis=0)
    grads["pos_emb"] = d_pos
    d_seg = np.zeros_like(params["seg_emb"])
    np.add.at(d_seg, cache["seg"], d_emb)
    grads["seg_emb"] = d_seg
    return grads


def backward_batch(params, config: ModelConfig, batch: Batch, result: ForwardResult,
                   lam: float, mu: float):
    """Exact gradients of the joint loss wrt every parameter tensor."""
    if result.cache is None:
        raise ModelError("forward_batch must be called with want_cache=True before backward")
    cache = result.cache
    loss, (d_mlm_logits, d_tc_logits, d_tmt_logits) = joint_loss(result, batch, lam, mu)
    dt = config.np_dtype
    d_mlm_logits = d_mlm_logits.astype(dt)
    d_tc_logits = d_tc_logits.astype(dt)
    d_tmt_logits = d_tmt_logits.astype(dt)

    grads: dict[str, np.ndarray] = {}
    d_hidden = np.zeros_like(result.hidden)

    # MLM head
    mlm_h = cache["mlm_h"]
    out_w = params["tok_emb"].T if config.tie_mlm else params["mlm_out_w"]
    grads["mlm_out_b"] = d_mlm_logits.sum(axis=0)
    d_out_w = mlm_h.T @ d_mlm_logits
    d_mlm_h = d_mlm_logits @ out_w.T
    d_mlm_act, d_ln_g, d_ln_b = layer_norm_backward(d_mlm_h, cache["mlm_ln"], params["mlm_ln_g"])
    grads["mlm_ln_g"], grads["mlm_ln_b"] = d_ln_g, d_ln_b
    d_mlm_pre = d_mlm_act * gelu_grad(cache["mlm_pre"])
    grads["mlm_w"] = cache["mlm_g"].T @ d_mlm_pre
    grads["mlm_b"] = d_mlm_pre.sum(axis=0)
    d_g = d_mlm_pre @ params["mlm_w"].T
    np.add.at(d_hidden, (batch.mlm_b, batch.mlm_i), d_g)

    # TC head
    grads["tc_w"] = cache["tc_h"].T @ d_tc_logits
    grads["tc_b"] = d_tc_logits.sum(axis=0)
    np.add.at(d_hidden, (batch.tc_b, batch.tc_i), d_tc_logits @ params["tc_w"].T)

    # TMT head
    grads["tmt_w"] = cache["tmt_h"].T @ d_tmt_logits
    grads["tmt_b"] = d_tmt_logits.sum(axis=0)
    np.add.at(d_hidden, (batch.tmt_b, batch.tmt_i), d_tmt_logits @ params["tmt_w"].T)

    enc_grads = encoder_backward(params, config, cache, d_hidden)
    for k, v in enc_grads.items():
        grads[k] = v
    if config.tie_mlm:
        grads["tok_emb"] = grads["tok_emb"] + d_out_w.T
    else:
        grads["mlm_out_w"] = d_out_w

    full = {name: grads.get(name) for name in param_names(config)}
    for name, g in full.items():
        if g is None:
            full[name] = np.zeros_like(params[name])
    return loss, full


def backward(params, config: ModelConfig, example: PretrainExample, lam: float, mu: float):
    """Single-example loss and exact parameter gradients."""
    batch = make_batch([example], dtype=config.np_dtype)
    result = forward_batch(params, config, batch, want_cache=True)
    return backward_batch(params, config, batch, result, lam, mu)
