"""Dense row-major tensor with byte-accurate allocation tracking.

The :class:`Tensor` is a deliberately small value type: a C-contiguous numpy
buffer in float32 or float64 plus its shape. All math lives in
:mod:`xvit.ops`; nothing here or there mutates an input tensor, so values can
be shared freely across threads for reading. The only sanctioned in-place
mutations are the optimizer's parameter update and the gradcheck perturbation
loop, both of which require exclusive access.

Every tensor buffer registers its byte count with a process-wide allocation
counter on creation and unregisters on destruction. The counter's high-water
mark is what the scaling benchmark reads; it counts tensor payload bytes
only, not Python object overhead or transient numpy temporaries inside an
op's kernel. Ops run single-threaded at the Python level with a fixed
reduction order (whatever numpy/BLAS does is fixed per process), so repeat
runs on identical inputs are bit-identical; there is no nondeterministic
fast path to switch off.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "AllocStats",
    "alloc_stats",
    "reset_peak",
    "tracking_enabled",
    "set_tracking",
    "no_tracking",
    "tensor",
    "zeros",
    "DTYPES",
]

DTYPES = {"f32": np.float32, "f64": np.float64}
_VALID_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_lock = threading.Lock()
_live_bytes = 0
_peak_bytes = 0
_alloc_count = 0
_tracking = True


@dataclass(frozen=True)
class AllocStats:
    """Snapshot of the process-wide tensor allocation counters.

    ``live_bytes`` is the sum of payload bytes of all tensors currently
    alive; ``peak_bytes`` is the high-water mark of ``live_bytes`` since the
    last :func:`reset_peak`; ``alloc_count`` counts buffer creations.
    """

    live_bytes: int
    peak_bytes: int
    alloc_count: int


def alloc_stats() -> AllocStats:
    with _lock:
        return AllocStats(_live_bytes, _peak_bytes, _alloc_count)


def reset_peak() -> None:
    """Reset the high-water mark to the current live byte count."""
    global _peak_bytes
    with _lock:
        _peak_bytes = _live_bytes


def tracking_enabled() -> bool:
    return _tracking


def set_tracking(enabled: bool) -> None:
    """Globally enable/disable allocation accounting for new tensors.

    Tensors created while tracking is off are never counted (creation or
    destruction), so live_bytes stays conserved across toggles. Used by hot
    loops (finite-difference sweeps) where counter updates are pure overhead.
    """
    global _tracking
    _tracking = enabled


class no_tracking:
    """Context manager that suspends allocation accounting."""

    def __enter__(self):
        self._prev = _tracking
        set_tracking(False)
        return self

    def __exit__(self, *exc):
        set_tracking(self._prev)
        return False


def _register(nbytes: int) -> None:
    global _live_bytes, _peak_bytes, _alloc_count
    with _lock:
        _live_bytes += nbytes
        _alloc_count += 1
        if _live_bytes > _peak_bytes:
            _peak_bytes = _live_bytes


def _unregister(nbytes: int) -> None:
    global _live_bytes
    with _lock:
        _live_bytes -= nbytes


class Tensor:
    """A dense row-major array of float32 or float64.

    Treated as immutable by every public operation: ops read inputs and
    allocate fresh outputs, so no aliasing is observable through the API.
    """

    __slots__ = ("data", "_counted")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _VALID_DTYPES:
            arr = arr.astype(np.float64)
        arr = np.ascontiguousarray(arr)
        if arr is data or (isinstance(data, np.ndarray) and arr.base is data):
            arr = arr.copy()  # own the buffer; never alias caller memory
        self._adopt(arr)

    def _adopt(self, arr: np.ndarray) -> None:
        self.data = arr
        self._counted = _tracking
        if self._counted:
            _register(arr.nbytes)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        """Adopt a freshly computed C-contiguous array without copying.

        Internal fast path for ops; the caller must own ``arr`` exclusively.
        """
        t = cls.__new__(cls)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        t._adopt(arr)
        return t

    def __del__(self):
        if getattr(self, "_counted", False):
            try:
                _unregister(self.data.nbytes)
            except Exception:
                pass  # interpreter shutdown can tear down module globals first

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def numpy(self) -> np.ndarray:
        """Copy of the underlying buffer (the tensor itself stays private)."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype) -> "Tensor":
        return Tensor._wrap(self.data.astype(dtype))

    def assign_(self, arr: np.ndarray) -> None:
        """In-place value update (optimizer step). Shape and dtype must match."""
        if arr.shape != self.data.shape:
            raise ShapeError(f"assign_ shape mismatch: {arr.shape} vs {self.data.shape}")
        np.copyto(self.data, arr)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"


def tensor(data, dtype=None) -> Tensor:
    """Build a tensor from any array-like; floats default to float64."""
    return Tensor(data, dtype=dtype)


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=dtype))
