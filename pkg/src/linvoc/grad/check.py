"""Central finite-difference checking of recorded backward rules."""
from __future__ import annotations

import hashlib
from typing import Callable, Sequence

import numpy as np

from .tensor import GradError, Tensor, backward, track_kinks


def _evaluate(f: Callable[[], Tensor]) -> tuple[float, bytes]:
    """f() and a digest of the leaky_relu branch pattern it went through."""
    with track_kinks() as signs:
        value = float(f().data)
    digest = hashlib.sha1()
    for s in signs:
        digest.update(s.tobytes())
    return value, digest.digest()


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
               max_probes: int | None = None, seed: int = 0, stats: dict | None = None) -> float:
    """Return max |analytic - numeric| / (|numeric| + 1e-8) over probed coordinates.

    ``f`` is re-evaluated from scratch at every probe, reading the current
    ``.data`` of ``inputs``; inputs should be float64. With ``max_probes`` set,
    each input is checked at that many randomly chosen coordinates instead of
    all of them.

    A probe whose +h or -h evaluation switches any leaky_relu unit to the other
    branch straddles a point where the function is not differentiable; the
    central difference is meaningless there, so the probe is skipped (and, when
    sampling, replaced by another coordinate).

    Likewise a coordinate whose analytic and numeric derivatives are both below
    the resolution of the central difference, ``eps * |f| / (h * 1e-4)`` (the
    size at which float64 round-off in f alone would already cost 1e-4 relative
    error), carries no information about the backward rule and is skipped.
    ``stats`` receives the counts.
    """
    for x in inputs:
        x.grad = None
    loss = f()
    if loss.size != 1:
        raise GradError("grad_check needs a scalar-valued function")
    if not np.isfinite(loss.data).all():
        raise GradError("function is non-finite at the base point")
    backward(loss)
    f0, base_sig = _evaluate(f)
    resolution = np.finfo(np.float64).eps * abs(f0) / (h * 1e-4)
    rng = np.random.default_rng(seed)
    worst = 0.0
    probed = skipped = unresolved = 0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        flat = x.data.reshape(-1)
        order = np.arange(flat.size)
        want = flat.size
        if max_probes is not None and flat.size > max_probes:
            order = rng.permutation(flat.size)
            want = max_probes
        done = 0
        for i in order:
            if done >= want:
                break
            orig = flat[i]
            flat[i] = orig + h
            fp, sig_p = _evaluate(f)
            flat[i] = orig - h
            fm, sig_m = _evaluate(f)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradError(f"function is non-finite at probe {i} of {x!r}")
            if sig_p != base_sig or sig_m != base_sig:
                skipped += 1
                continue
            numeric = (fp - fm) / (2 * h)
            a_i = analytic.reshape(-1)[i]
            if max(abs(a_i), abs(numeric)) < resolution:
                unresolved += 1
                continue
            err = abs(a_i - numeric) / (abs(numeric) + 1e-8)
            worst = max(worst, err)
            done += 1
            probed += 1
    if stats is not None:
        stats.update(probed=probed, skipped=skipped, unresolved=unresolved)
    return worst
