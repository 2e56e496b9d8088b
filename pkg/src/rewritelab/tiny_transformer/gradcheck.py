"""Central finite-difference check of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as M

DEFAULT_STEP = 1e-4
DEFAULT_TOL = 1e-4


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tolerance: float = DEFAULT_TOL

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.max_rel_error.values())

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.max_rel_error, key=self.max_rel_error.get)
        return name, self.max_rel_error[name]

    def lines(self) -> list[str]:
        return [
            f"{'ok  ' if err < self.tolerance else 'FAIL'} {name:<20s} {err:.3e}"
            for name, err in self.max_rel_error.items()
        ]


def micro_setup(seed: int = 0, vocab_size: int = 7, seq_len: int = 6, batch: int = 2,
                d_model: int = 8, n_layers: int = 1, n_heads: int = 1):
    """Float64 micro model with a random batch and a random non-empty loss mask."""
    rng = np.random.default_rng(seed)
    cfg = M.ModelConfig(vocab_size=vocab_size, max_seq_len=seq_len, d_model=d_model,
                        n_layers=n_layers, n_heads=n_heads)
    params = M.init_params(cfg, rng, dtype=np.float64)
    # Larger-than-default weights so every path carries signal.
    for name, p in params.items():
        params[name] = p + rng.standard_normal(p.shape) * 0.3
    ids = rng.integers(0, vocab_size, size=(batch, seq_len))
    mask = rng.random((batch, seq_len)) < 0.6
    mask[:, -1] = True
    return cfg, params, ids, mask


def grad_check(cfg: M.ModelConfig, params: M.Params, ids: np.ndarray, mask: np.ndarray,
               step: float = DEFAULT_STEP, tolerance: float = DEFAULT_TOL,
               backward=M.backward, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare ``backward`` against central differences, per parameter tensor.

    The relative error of one entry is ``|a - n| / max(|a| + |n|, 1e-8)``.
    ``max_entries`` limits the checked entries per tensor (random subset).
    """
    logits, cache = M.forward(params, cfg, ids)
    _, dlogits = M.cross_entropy(logits, ids, mask)
    analytic = backward(params, cfg, cache, dlogits)

    def loss() -> float:
        return M.cross_entropy(M.logits_only(params, cfg, ids), ids, mask)[0]

    report = GradCheckReport(tolerance=tolerance)
    for name, p in params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        g = analytic[name].reshape(-1)
        worst = 0.0
        for j in idx:
            old = flat[j]
            flat[j] = old + step
            up = loss()
            flat[j] = old - step
            down = loss()
            flat[j] = old
            num = (up - down) / (2 * step)
            rel = abs(g[j] - num) / max(abs(g[j]) + abs(num), 1e-8)
            worst = max(worst, rel)
        report.max_rel_error[name] = worst
    return report
