"""AdamW training loop, greedy decoding and checkpoint files."""
from __future__ import annotations

import csv
import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..dataset_io import Example, PromptTemplate, format_prompt
from ..seeding import make_rng
from . import model as M
from .vocab import EOS, PAD, Vocab, encode_examples, encode_prompts, vocab_for_examples

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RWLBCKPT"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    epochs: int = 50
    batch_size: int = 64
    grad_clip: float | None = 1.0
    mask_prompt: bool = True
    eval_every: int = 1
    eval_max_examples: int | None = 512
    checkpoint_every: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class TinyTransformer:
    """Parameters plus everything needed to turn prompts into completions."""

    cfg: M.ModelConfig
    params: M.Params
    vocab: Vocab
    template: PromptTemplate | None = None

    @classmethod
    def for_examples(cls, examples: Sequence[Example], d_model: int = 256, n_layers: int = 6,
                     n_heads: int = 4, dropout: float = 0.0, seed: int = 0,
                     template: PromptTemplate | None = None, dtype=np.float32) -> "TinyTransformer":
        vocab = vocab_for_examples(examples, template)
        enc = encode_examples(vocab, examples, template)
        cfg = M.ModelConfig(vocab_size=len(vocab), max_seq_len=int(enc.lengths.max()), d_model=d_model,
                            n_layers=n_layers, n_heads=n_heads, dropout=dropout)
        return cls(cfg, M.init_params(cfg, make_rng(seed, 0), dtype), vocab, template)

    def complete(self, prompts: Sequence[str], batch_size: int = 256) -> list[str]:
        ids = encode_prompts(self.vocab, prompts)
        out = generate_greedy_batch(self.params, self.cfg, ids, batch_size=batch_size)
        return [self.vocab.decode(o) for o in out]

    def __call__(self, prompts: Sequence[str]) -> list[str]:
        return self.complete(prompts)


# -- optimizer ----------------------------------------------------------------

class AdamW:
    """Decoupled weight decay (applied to matrices only) with bias correction."""

    def __init__(self, params: M.Params, tc: TrainConfig):
        self.tc = tc
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: M.Params, grads: M.Params, lr: float) -> None:
        tc = self.tc
        self.t += 1
        c1 = 1.0 - tc.beta1 ** self.t
        c2 = 1.0 - tc.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= tc.beta1
            m += (1.0 - tc.beta1) * g
            v *= tc.beta2
            v += (1.0 - tc.beta2) * g * g
            if p.ndim >= 2 and tc.weight_decay:
                p *= 1.0 - lr * tc.weight_decay
            p -= (lr / c1) * m / (np.sqrt(v / c2) + tc.eps)


def linear_lr(base: float, step: int, total: int) -> float:
    """Linear decay from ``base`` at step 0 to 0 at ``total``."""
    return base * max(0.0, 1.0 - step / total)


def clip_grads(grads: M.Params, max_norm: float | None) -> float:
    norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        s = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= s
    return norm


# -- decoding -----------------------------------------------------------------

def generate_greedy(params: M.Params, cfg: M.ModelConfig, prompt_ids: Sequence[int],
                    max_new_tokens: int | None = None) -> list[int]:
    """Argmax decoding (ties -> lowest id) until EOS or ``max_new_tokens``.

    The returned ids exclude the prompt and the EOS token.
    """
    return generate_greedy_batch(params, cfg, [list(prompt_ids)], max_new_tokens)[0]


def generate_greedy_batch(params: M.Params, cfg: M.ModelConfig, prompts: Sequence[Sequence[int]],
                          max_new_tokens: int | None = None, batch_size: int = 256) -> list[list[int]]:
    results: list[list[int] | None] = [None] * len(prompts)
    by_len: dict[int, list[int]] = {}
    for i, p in enumerate(prompts):
        by_len.setdefault(len(p), []).append(i)
    for plen, idxs in sorted(by_len.items()):
        budget = cfg.max_seq_len - plen
        if max_new_tokens is not None:
            if plen + max_new_tokens > cfg.max_seq_len:
                raise M.ModelError(
                    f"prompt length {plen} + max_new_tokens {max_new_tokens} exceeds {cfg.max_seq_len}")
            budget = max_new_tokens
        if budget < 0:
            raise M.ModelError(f"prompt length {plen} exceeds max_seq_len {cfg.max_seq_len}")
        for start in range(0, len(idxs), batch_size):
            chunk = idxs[start:start + batch_size]
            ids = np.array([prompts[i] for i in chunk], dtype=np.int64)
            outs = _greedy_chunk(params, cfg, ids, budget)
            for i, o in zip(chunk, outs):
                results[i] = o
    return results  # type: ignore[return-value]


def _greedy_chunk(params, cfg, ids: np.ndarray, budget: int) -> list[list[int]]:
    B = ids.shape[0]
    out: list[list[int]] = [[] for _ in range(B)]
    if budget == 0:
        return out
    dec = M.KVDecoder(params, cfg)
    logits = dec.prefill(ids)
    done = np.zeros(B, dtype=bool)
    for n in range(budget):
        tok = logits.argmax(-1)
        for b in np.flatnonzero(~done):
            if tok[b] == EOS:
                done[b] = True
            else:
                out[b].append(int(tok[b]))
        if done.all() or n == budget - 1:
            break
        logits = dec.step(np.where(done, PAD, tok))
    return out


# -- training -----------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    step: int
    lr: float
    train_loss: float
    eval_exact_match: float | None
    seconds: float = 0.0


@dataclass
class TrainResult:
    model: TinyTransformer
    log: list[EpochLog] = field(default_factory=list)
    init_loss: float | None = None


def exact_match_rate(model: TinyTransformer, examples: Sequence[Example]) -> float:
    if not examples:
        return float("nan")
    preds = model.complete([format_prompt(ex, model.template) for ex in examples])
    return sum(p == ex.target_text for p, ex in zip(preds, examples)) / len(examples)


def mean_loss(model: TinyTransformer, examples: Sequence[Example], mask_prompt: bool = True,
              batch_size: int = 256) -> float:
    enc = encode_examples(model.vocab, examples, model.template)
    mask = enc.mask if mask_prompt else _full_mask(enc)
    total, count = 0.0, 0
    for s in range(0, len(examples), batch_size):
        ids, m = _trim(enc.ids[s:s + batch_size], mask[s:s + batch_size])
        n = int(m[:, 1:].sum())
        loss, _ = M.cross_entropy(M.logits_only(model.params, model.cfg, ids), ids, m)
        total += loss * n
        count += n
    return total / count


def _full_mask(enc) -> np.ndarray:
    mask = np.zeros_like(enc.mask)
    for i, n in enumerate(enc.lengths):
        mask[i, 1:n] = True
    return mask


def _trim(ids: np.ndarray, mask: np.ndarray):
    T = int(np.max(np.flatnonzero((ids != PAD).any(0)))) + 1
    return ids[:, :T], mask[:, :T]


def train(model: TinyTransformer, train_set: Sequence[Example], tc: TrainConfig,
          eval_set: Sequence[Example] | None = None, out_dir: str | Path | None = None,
          on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Train in place.  Deterministic for a fixed ``(tc.seed, config, data)``."""
    enc = encode_examples(model.vocab, train_set, model.template)
    if int(enc.lengths.max()) > model.cfg.max_seq_len:
        raise M.ModelError("training examples exceed the model's max_seq_len")
    mask = enc.mask if tc.mask_prompt else _full_mask(enc)
    N = len(train_set)
    steps_per_epoch = math.ceil(N / tc.batch_size)
    total = steps_per_epoch * tc.epochs
    opt = AdamW(model.params, tc)
    result = TrainResult(model)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    eval_examples = list(eval_set) if eval_set is not None else None
    if eval_examples is not None and tc.eval_max_examples is not None:
        eval_examples = eval_examples[: tc.eval_max_examples]
    step = 0
    for epoch in range(1, tc.epochs + 1):
        t0 = time.time()
        order = make_rng(tc.seed, 1, epoch).permutation(N)
        losses = []
        for b in range(steps_per_epoch):
            sel = order[b * tc.batch_size:(b + 1) * tc.batch_size]
            ids, m = _trim(enc.ids[sel], mask[sel])
            drop_rng = make_rng(tc.seed, 2, step) if model.cfg.dropout > 0 else None
            loss, grads = M.loss_and_grad(model.params, model.cfg, ids, m, drop_rng)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}, step {step}, "
                                       f"lr {linear_lr(tc.learning_rate, step, total):.3g}")
            if result.init_loss is None:
                result.init_loss = loss
            clip_grads(grads, tc.grad_clip)
            lr = linear_lr(tc.learning_rate, step, total)
            opt.step(model.params, grads, lr)
            losses.append(loss)
            step += 1
        em = None
        if eval_examples and (epoch % tc.eval_every == 0 or epoch == tc.epochs):
            em = exact_match_rate(model, eval_examples)
        entry = EpochLog(epoch, step, linear_lr(tc.learning_rate, step, total), float(np.mean(losses)),
                         em, time.time() - t0)
        result.log.append(entry)
        log.info("epoch %d step %d loss %.4f em %s (%.1fs)", epoch, step, entry.train_loss, em, entry.seconds)
        if on_epoch:
            on_epoch(entry)
        if out:
            write_metrics(out / "metrics.csv", result.log)
            if tc.checkpoint_every and epoch % tc.checkpoint_every == 0:
                save_checkpoint(out / f"epoch{epoch:03d}.ckpt", model)
    if out:
        save_checkpoint(out / "model.ckpt", model)
    return result


def write_metrics(path: str | Path, entries: Sequence[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "step", "lr", "train_loss", "eval_exact_match"])
        for e in entries:
            w.writerow([e.epoch, e.step, f"{e.lr:.8g}", f"{e.train_loss:.8g}",
                        "" if e.eval_exact_match is None else f"{e.eval_exact_match:.6f}"])


# -- checkpoints ----------------------------------------------------------------
#
# Layout (all integers little-endian):
#   8 bytes   magic b"RWLBCKPT"
#   uint32    format version (1)
#   uint64    header length H
#   H bytes   UTF-8 JSON header: {"model": ModelConfig, "vocab": [...], "template": [fmt, cue] | null,
#             "tensors": [[name, dtype, shape], ...]}
#   then each tensor's raw little-endian bytes, C order, in header order.

def save_checkpoint(path: str | Path, model: TinyTransformer) -> None:
    names = list(model.params)
    tensors = []
    for n in names:
        p = model.params[n]
        tensors.append([n, p.dtype.newbyteorder("<").str, list(p.shape)])
    header = {
        "model": model.cfg.to_dict(),
        "vocab": list(model.vocab.symbols),
        "template": None if model.template is None else [model.template.fmt, model.template.cue],
        "tensors": tensors,
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n, dt, _ in tensors:
            fh.write(np.ascontiguousarray(model.params[n], dtype=np.dtype(dt)).tobytes())


def load_checkpoint(path: str | Path) -> TinyTransformer:
    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        params = {}
        for name, dt, shape in header["tensors"]:
            dtype = np.dtype(dt)
            n = int(np.prod(shape)) * dtype.itemsize
            params[name] = np.frombuffer(fh.read(n), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    tpl = PromptTemplate(*header["template"]) if header["template"] else None
    return TinyTransformer(M.ModelConfig(**header["model"]), params, Vocab(tuple(header["vocab"])), tpl)
