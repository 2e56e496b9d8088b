"""Decoder-only transformer in numpy with a hand-written backward pass.

GPT-2 layout: learned token and position embeddings, pre-norm residual
blocks (causal multi-head attention, tanh-GELU MLP), final LayerNorm and an
untied output projection with bias.  Parameters live in a flat
``dict[str, ndarray]`` so optimizers, checkpoints and the gradient checker
can treat them uniformly.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    max_seq_len: int
    d_model: int = 256
    n_layers: int = 6
    n_heads: int = 4
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads:
            raise ModelError("d_model must be divisible by n_heads")
        if min(self.vocab_size, self.max_seq_len, self.d_model, self.n_layers, self.n_heads) < 1:
            raise ModelError("model dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError("dropout must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


Params = dict[str, np.ndarray]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, V = cfg.d_model, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (V, d),
        "pos_emb": (cfg.max_seq_len, d),
    }
    for i in range(cfg.n_layers):
        p = f"h{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "attn.w_qkv": (d, 3 * d), p + "attn.b_qkv": (3 * d,),
            p + "attn.w_o": (d, d), p + "attn.b_o": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "mlp.w_fc": (d, 4 * d), p + "mlp.b_fc": (4 * d,),
            p + "mlp.w_proj": (4 * d, d), p + "mlp.b_proj": (d,),
        })
    shapes.update({"lnf.g": (d,), "lnf.b": (d,), "head.w": (d, V), "head.b": (V,)})
    return shapes


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> Params:
    """N(0, 0.02) for matrices and embeddings, ones for norm gains, zeros elsewhere."""
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape, dtype=dtype)
        elif len(shape) == 2:
            params[name] = (rng.standard_normal(shape) * 0.02).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def num_params(params: Params) -> int:
    return int(sum(p.size for p in params.values()))


# -- primitives ---------------------------------------------------------------

def layernorm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def layernorm_backward(dy, g, cache):
    xhat, rstd = cache
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, dy.shape[-1]).sum(0)
    return dx, dg, db


def gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def gelu_backward(dy, x, t):
    dt = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dt)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _causal_bias(T: int, dtype) -> np.ndarray:
    return np.triu(np.full((T, T), -np.inf, dtype=dtype), k=1)


def _dropout(x, rate, rng):
    if rate == 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


# -- forward / backward ---------------------------------------------------------

def forward(params: Params, cfg: ModelConfig, ids: np.ndarray, rng: np.random.Generator | None = None):
    """Logits ``(B, T, V)`` and the activation cache for :func:`backward`.

    Dropout is active only when ``rng`` is given and ``cfg.dropout > 0``.
    """
    B, T = ids.shape
    if T > cfg.max_seq_len:
        raise ModelError(f"sequence length {T} exceeds max_seq_len {cfg.max_seq_len}")
    H, hd = cfg.n_heads, cfg.head_dim
    dtype = params["tok_emb"].dtype
    x = params["tok_emb"][ids] + params["pos_emb"][:T]
    x, emb_keep = _dropout(x, cfg.dropout, rng)
    bias = _causal_bias(T, dtype)
    scale = 1.0 / math.sqrt(hd)
    layers = []
    for i in range(cfg.n_layers):
        p = f"h{i}."
        h1, ln1 = layernorm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        qkv = h1 @ params[p + "attn.w_qkv"] + params[p + "attn.b_qkv"]
        q, k, v = np.split(qkv.reshape(B, T, 3, H, hd).transpose(2, 0, 3, 1, 4), 3, axis=0)
        q, k, v = q[0], k[0], v[0]  # (B, H, T, hd)
        att = softmax((q @ k.transpose(0, 1, 3, 2)) * scale + bias)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)
        a_out = y @ params[p + "attn.w_o"] + params[p + "attn.b_o"]
        a_out, a_keep = _dropout(a_out, cfg.dropout, rng)
        x = x + a_out
        h2, ln2 = layernorm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        f = h2 @ params[p + "mlp.w_fc"] + params[p + "mlp.b_fc"]
        gf, t = gelu(f)
        m_out = gf @ params[p + "mlp.w_proj"] + params[p + "mlp.b_proj"]
        m_out, m_keep = _dropout(m_out, cfg.dropout, rng)
        x = x + m_out
        layers.append(dict(h1=h1, ln1=ln1, q=q, k=k, v=v, att=att, y=y, a_keep=a_keep,
                           h2=h2, ln2=ln2, f=f, t=t, gf=gf, m_keep=m_keep))
    hf, lnf = layernorm(x, params["lnf.g"], params["lnf.b"])
    logits = hf @ params["head.w"] + params["head.b"]
    cache = dict(ids=ids, emb_keep=emb_keep, layers=layers, hf=hf, lnf=lnf)
    return logits, cache


def logits_only(params: Params, cfg: ModelConfig, ids: np.ndarray) -> np.ndarray:
    return forward(params, cfg, ids)[0]


def backward(params: Params, cfg: ModelConfig, cache: dict, dlogits: np.ndarray) -> Params:
    ids = cache["ids"]
    B, T = ids.shape
    H, hd, d = cfg.n_heads, cfg.head_dim, cfg.d_model
    scale = 1.0 / math.sqrt(hd)
    grads: Params = {}

    dl2 = dlogits.reshape(B * T, -1)
    grads["head.w"] = cache["hf"].reshape(B * T, d).T @ dl2
    grads["head.b"] = dl2.sum(0)
    dhf = dlogits @ params["head.w"].T
    dx, grads["lnf.g"], grads["lnf.b"] = layernorm_backward(dhf, params["lnf.g"], cache["lnf"])

    for i in reversed(range(cfg.n_layers)):
        p = f"h{i}."
        c = cache["layers"][i]
        # MLP branch
        dm = dx if c["m_keep"] is None else dx * c["m_keep"]
        dm2 = dm.reshape(B * T, d)
        grads[p + "mlp.w_proj"] = c["gf"].reshape(B * T, -1).T @ dm2
        grads[p + "mlp.b_proj"] = dm2.sum(0)
        dgf = dm @ params[p + "mlp.w_proj"].T
        df = gelu_backward(dgf, c["f"], c["t"])
        df2 = df.reshape(B * T, -1)
        grads[p + "mlp.w_fc"] = c["h2"].reshape(B * T, d).T @ df2
        grads[p + "mlp.b_fc"] = df2.sum(0)
        dh2 = df @ params[p + "mlp.w_fc"].T
        dln, grads[p + "ln2.g"], grads[p + "ln2.b"] = layernorm_backward(dh2, params[p + "ln2.g"], c["ln2"])
        dx = dx + dln
        # attention branch
        da = dx if c["a_keep"] is None else dx * c["a_keep"]
        da2 = da.reshape(B * T, d)
        grads[p + "attn.w_o"] = c["y"].reshape(B * T, d).T @ da2
        grads[p + "attn.b_o"] = da2.sum(0)
        dy = (da @ params[p + "attn.w_o"].T).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        att, q, k, v = c["att"], c["q"], c["k"], c["v"]
        datt = dy @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ dy
        ds = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dqkv = np.stack([dq, dk, dv], axis=0).transpose(1, 3, 0, 2, 4).reshape(B, T, 3 * d)
        dqkv2 = dqkv.reshape(B * T, 3 * d)
        grads[p + "attn.w_qkv"] = c["h1"].reshape(B * T, d).T @ dqkv2
        grads[p + "attn.b_qkv"] = dqkv2.sum(0)
        dh1 = dqkv @ params[p + "attn.w_qkv"].T
        dln, grads[p + "ln1.g"], grads[p + "ln1.b"] = layernorm_backward(dh1, params[p + "ln1.g"], c["ln1"])
        dx = dx + dln

    if cache["emb_keep"] is not None:
        dx = dx * cache["emb_keep"]
    dpos = np.zeros_like(params["pos_emb"])
    dpos[:T] = dx.sum(0)
    grads["pos_emb"] = dpos
    V = params["tok_emb"].shape[0]
    flat = ids.reshape(-1)
    onehot = np.zeros((flat.size, V), dtype=dx.dtype)
    onehot[np.arange(flat.size), flat] = 1.0
    grads["tok_emb"] = onehot.T @ dx.reshape(B * T, d)
    return grads


# -- loss -------------------------------------------------------------------------

def cross_entropy(logits: np.ndarray, ids: np.ndarray, loss_mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean next-token cross-entropy over positions flagged in ``loss_mask``.

    ``loss_mask[b, t]`` marks token ``ids[b, t]`` as a prediction target; it is
    predicted from ``logits[b, t - 1]``, so ``loss_mask[:, 0]`` is ignored.
    Returns the loss and its gradient with respect to ``logits``.
    """
    sel = loss_mask[:, 1:]
    n = int(sel.sum())
    if n == 0:
        raise ModelError("loss mask selects no positions")
    pred = logits[:, :-1]
    z = pred - pred.max(-1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(-1))
    tgt = ids[:, 1:]
    picked = np.take_along_axis(z, tgt[..., None], axis=-1)[..., 0]
    nll = logsumexp - picked
    loss = float((nll * sel).sum() / n)
    probs = np.exp(z - logsumexp[..., None])
    np.put_along_axis(probs, tgt[..., None], np.take_along_axis(probs, tgt[..., None], -1) - 1.0, axis=-1)
    dlogits = np.zeros_like(logits)
    dlogits[:, :-1] = probs * (sel[..., None] / n)
    return loss, dlogits.astype(logits.dtype, copy=False)


def loss_and_grad(params: Params, cfg: ModelConfig, ids: np.ndarray, loss_mask: np.ndarray,
                  rng: np.random.Generator | None = None) -> tuple[float, Params]:
    logits, cache = forward(params, cfg, ids, rng)
    loss, dlogits = cross_entropy(logits, ids, loss_mask)
    return loss, backward(params, cfg, cache, dlogits)


# -- incremental decoding --------------------------------------------------------------

def _attend_step(q, k_all, v_all):
    # q: (B, H, 1, hd); k_all, v_all: (B, H, t, hd)
    s = (q @ k_all.transpose(0, 1, 3, 2)) / math.sqrt(q.shape[-1])
    return softmax(s) @ v_all


class KVDecoder:
    """Key/value-cached forward for greedy decoding of equal-length prompts."""

    def __init__(self, params: Params, cfg: ModelConfig):
        self.params, self.cfg = params, cfg
        self.keys: list[np.ndarray] = []
        self.values: list[np.ndarray] = []
        self.t = 0

    def _block_inputs(self, x, i):
        p = f"h{i}."
        P, cfg = self.params, self.cfg
        B, T, _ = x.shape
        h1, _ = layernorm(x, P[p + "ln1.g"], P[p + "ln1.b"])
        qkv = (h1 @ P[p + "attn.w_qkv"] + P[p + "attn.b_qkv"]).reshape(B, T, 3, cfg.n_heads, cfg.head_dim)
        qkv = qkv.transpose(2, 0, 3, 1, 4)
        return qkv[0], qkv[1], qkv[2]

    def _block_rest(self, x, y, i):
        p = f"h{i}."
        P = self.params
        B, T = x.shape[:2]
        y = y.transpose(0, 2, 1, 3).reshape(B, T, self.cfg.d_model)
        x = x + y @ P[p + "attn.w_o"] + P[p + "attn.b_o"]
        h2, _ = layernorm(x, P[p + "ln2.g"], P[p + "ln2.b"])
        gf, _ = gelu(h2 @ P[p + "mlp.w_fc"] + P[p + "mlp.b_fc"])
        return x + gf @ P[p + "mlp.w_proj"] + P[p + "mlp.b_proj"]

    def _head(self, x):
        P = self.params
        hf, _ = layernorm(x, P["lnf.g"], P["lnf.b"])
        return hf @ P["head.w"] + P["head.b"]

    def prefill(self, ids: np.ndarray) -> np.ndarray:
        """Consume ``(B, T)`` prompt ids; returns last-position logits ``(B, V)``."""
        B, T = ids.shape
        if T > self.cfg.max_seq_len:
            raise ModelError(f"prompt length {T} exceeds max_seq_len {self.cfg.max_seq_len}")
        P = self.params
        x = P["tok_emb"][ids] + P["pos_emb"][:T]
        bias = _causal_bias(T, x.dtype)
        for i in range(self.cfg.n_layers):
            q, k, v = self._block_inputs(x, i)
            self.keys.append(k)
            self.values.append(v)
            att = softmax((q @ k.transpose(0, 1, 3, 2)) / math.sqrt(self.cfg.head_dim) + bias)
            x = self._block_rest(x, att @ v, i)
        self.t = T
        return self._head(x[:, -1])

    def step(self, tok: np.ndarray) -> np.ndarray:
        if self.t >= self.cfg.max_seq_len:
            raise ModelError("decoding ran past max_seq_len")
        P = self.params
        x = P["tok_emb"][tok][:, None, :] + P["pos_emb"][self.t]
        for i in range(self.cfg.n_layers):
            q, k, v = self._block_inputs(x, i)
            self.keys[i] = np.concatenate([self.keys[i], k], axis=2)
            self.values[i] = np.concatenate([self.values[i], v], axis=2)
            x = self._block_rest(x, _attend_step(q, self.keys[i], self.values[i]), i)
        self.t += 1
        return self._head(x[:, 0])
