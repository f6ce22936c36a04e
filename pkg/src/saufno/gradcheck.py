"""Central finite-difference gradient checks."""
from __future__ import annotations

import numpy as np

from .tensor import no_grad


def gradcheck(fn, tensors: dict, h: float = 1e-3, dtype=np.float64, max_entries: int = 48, seed: int = 0,
              atol: float = 1e-9) -> dict:
    """Compare reverse-mode gradients of ``fn()`` with central differences.

    ``fn`` takes no arguments and returns a scalar Tensor built from the
    tensors in ``tensors`` (name -> Tensor). They are cast to ``dtype`` for
    the replay and restored afterwards. At most ``max_entries`` randomly chosen
    entries per tensor are perturbed. Returns name -> relative error
    ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||, atol) over the checked entries;
    ``atol`` keeps exactly-zero gradients (e.g. a key bias under softmax) from
    reporting noise as a large relative error.
    """
    rng = np.random.default_rng(seed)
    saved = {k: t.data for k, t in tensors.items()}
    try:
        for t in tensors.values():
            t.data = t.data.astype(dtype)
            t.grad = None
        fn().backward()
        analytic = {k: np.array(t.grad) for k, t in tensors.items()}
        errors = {}
        for name, t in tensors.items():
            flat = t.data.reshape(-1)
            count = min(max_entries, flat.size)
            picks = rng.choice(flat.size, size=count, replace=False)
            fd = np.empty(count)
            with no_grad():
                for n, i in enumerate(picks):
                    orig = flat[i]
                    flat[i] = orig + h
                    up = float(fn().item())
                    flat[i] = orig - h
                    down = float(fn().item())
                    flat[i] = orig
                    fd[n] = (up - down) / (2 * h)
            ad = analytic[name].reshape(-1)[picks]
            scale = max(np.linalg.norm(ad), np.linalg.norm(fd), atol)
            errors[name] = float(np.linalg.norm(ad - fd) / scale)
        return errors
    finally:
        for k, t in tensors.items():
            t.data = saved[k]
            t.grad = None
