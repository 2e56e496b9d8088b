"""Minimal decoder-only transformer with a hand-written backward pass."""
from .model import ModelConfig, backward, cross_entropy, forward, init_params, loss_and_grad
from .train import (TinyTransformer, TrainConfig, generate_greedy, generate_greedy_batch, load_checkpoint,
                    save_checkpoint, train)
from .vocab import BOS, EOS, PAD, Vocab, build_vocab, vocab_for_examples

__all__ = [
    "BOS", "EOS", "PAD", "ModelConfig", "TinyTransformer", "TrainConfig", "Vocab", "backward",
    "build_vocab", "cross_entropy", "forward", "generate_greedy", "generate_greedy_batch", "init_params",
    "load_checkpoint", "loss_and_grad", "save_checkpoint", "train", "vocab_for_examples",
]
