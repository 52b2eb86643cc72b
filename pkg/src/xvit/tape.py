"""Reverse-mode differentiation tape.

Ops in :mod:`xvit.ops` check for an active tape and, when one is recording,
append a node pairing their output with a vector-Jacobian closure. Backward
then walks the nodes in exact reverse execution order and accumulates
gradients keyed by tensor identity. A tape is single-owner: it cannot be
entered twice, nested with another tape on the same thread, or backwarded
twice.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import TapeError
from .tensor import Tensor

__all__ = ["Tape", "active_tape"]

_tls = threading.local()


def active_tape() -> "Tape | None":
    return getattr(_tls, "tape", None)


class Tape:
    """Ordered record of executed ops plus accumulated gradients.

    Usage::

        with Tape() as tape:
            loss = ...              # ops executed here are recorded
        tape.backward(loss)
        g = tape.grad(param)        # Tensor with param's shape, or None
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._grads: dict[int, np.ndarray] = {}
        self._consumed = False
        self._entered = False

    def __enter__(self) -> "Tape":
        if self._entered or self._consumed:
            raise TapeError("tape already used; tapes are single-shot")
        if active_tape() is not None:
            raise TapeError("another tape is already recording on this thread")
        self._entered = True
        _tls.tape = self
        return self

    def __exit__(self, *exc):
        _tls.tape = None
        return False

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
        """Append one executed op. ``vjp(g)`` returns grads aligned with ``inputs``."""
        self._nodes.append((out, inputs, vjp))

    def backward(self, loss: Tensor) -> None:
        """Run reverse accumulation seeding d(loss)/d(loss) = 1.

        ``loss`` must be a single-element tensor produced while this tape was
        recording.
        """
        if self._consumed:
            raise TapeError("tape already backwarded; record a fresh tape")
        if active_tape() is self:
            raise TapeError("cannot backward while the tape is still recording")
        if not self._nodes:
            raise TapeError("tape is empty; no ops were recorded")
        if loss.size != 1:
            raise TapeError(f"backward seed must be a scalar tensor, got shape {loss.shape}")
        self._consumed = True
        grads = self._grads
        grads[id(loss)] = np.ones_like(loss.data)
        for out, inputs, vjp in reversed(self._nodes):
            g = grads.get(id(out))
            if g is None:
                continue  # op not on any path to the loss
            in_grads = vjp(g)
            for t, gt in zip(inputs, in_grads):
                if gt is None:
                    continue
                acc = grads.get(id(t))
                # never accumulate in place: a vjp may hand the same array to
                # several inputs (residual adds), so aliasing would corrupt
                grads[id(t)] = gt if acc is None else acc + gt

    def grad(self, t: Tensor) -> Tensor | None:
        """Accumulated gradient for ``t`` after backward, or None if unreached."""
        if not self._consumed:
            raise TapeError("backward has not run on this tape")
        g = self._grads.get(id(t))
        if g is None:
            return None
        if g.shape != t.shape:
            raise TapeError(f"gradient shape {g.shape} does not match parameter shape {t.shape}")
        # adopting without copy is safe: leaf gradients are freshly built by
        # the vjps / accumulation, and the internal dict dies with the tape
        return Tensor._wrap(np.ascontiguousarray(g))
