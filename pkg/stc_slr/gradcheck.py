from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from stc_slr.tensor_core import DiffTensor, backward, no_grad, zero_grad


@dataclass
class GradCheckResult:
    """
    Outcome of comparing analytic gradients with central differences.

    Attributes:
        max_rel_error (float): Worst (|analytic - numeric| - atol) / max(|analytic|, |numeric|).
        worst_tensor (int): Index into the checked tensors of the worst entry.
        worst_index (int): Flat index of the worst entry.
        entries_checked (int): Number of perturbed entries.
    """

    max_rel_error: float
    worst_tensor: int
    worst_index: int
    entries_checked: int

    def ok(self, rtol: float) -> bool:
        return self.max_rel_error <= rtol


def check_gradients(
    fn: Callable[[], DiffTensor],
    tensors: Sequence[DiffTensor],
    h: float = 1e-6,
    atol: float = 1e-8,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckResult:
    """
    Compare backward() against central finite differences for every tensor in `tensors`.

    `fn` must rebuild the scalar loss from the current values of `tensors` on every call.
    When `max_entries` is set, that many entries per tensor are sampled with `seed`.

    Example:
        result = check_gradients(lambda: reduce_sum(mul(x, x)), [x])
        assert result.ok(1e-5)
    """
    zero_grad(tensors)
    backward(fn())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    zero_grad(tensors)

    rng = np.random.default_rng(seed)
    worst = GradCheckResult(0.0, -1, -1, 0)
    checked = 0
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in indices:
            original = flat[i]
            with no_grad():
                flat[i] = original + h
                plus = fn().item()
                flat[i] = original - h
                minus = fn().item()
            flat[i] = original
            numeric = (plus - minus) / (2 * h)
            a = float(analytic[ti].reshape(-1)[i])
            # absolute slack first so entries that are zero up to roundoff pass
            rel = max(abs(a - numeric) - atol, 0.0) / max(abs(a), abs(numeric), 1e-12)
            checked += 1
            if rel > worst.max_rel_error:
                worst = GradCheckResult(rel, ti, int(i), 0)
    worst.entries_checked = checked
    return worst
