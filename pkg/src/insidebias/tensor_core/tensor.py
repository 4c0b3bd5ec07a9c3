from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DimensionError, NumericError

DEFAULT_DTYPE = np.float32


def check_finite(x: np.ndarray, what: str = "tensor", layer: str | None = None) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}", layer=layer)


class Tensor:
    """Dense float array with an optional same-shape gradient buffer.

    Thin wrapper around a contiguous numpy array. Construction rejects
    NaN/Inf so that every stored value is finite.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data, grad=None, dtype=None):
        arr = np.ascontiguousarray(data, dtype=dtype or getattr(data, "dtype", None))
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim == 0 or 0 in arr.shape:
            raise DimensionError(f"tensor extents must be positive, got {arr.shape}")
        check_finite(arr)
        self.data = arr
        self.grad = None
        if grad is not None:
            grad = np.asarray(grad, dtype=arr.dtype)
            if grad.shape != arr.shape:
                raise DimensionError(f"grad shape {grad.shape} != data shape {arr.shape}")
            self.grad = grad

    @classmethod
    def zeros(cls, shape, dtype=DEFAULT_DTYPE) -> Tensor:
        return cls(np.zeros(shape, dtype=dtype))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0)

    def numpy(self) -> np.ndarray:
        return self.data

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


@dataclass
class ConvFilterBank:
    """Filters ``[m_out, m_in, kh, kw]`` plus per-output-map bias."""

    filters: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if not isinstance(self.filters, Tensor):
            self.filters = Tensor(self.filters)
        if not isinstance(self.bias, Tensor):
            self.bias = Tensor(self.bias, dtype=self.filters.dtype)
        if self.filters.data.ndim != 4:
            raise DimensionError(f"filters must be 4-D [m_out, m_in, kh, kw], got {self.filters.shape}")
        m_out, _, kh, kw = self.filters.shape
        if self.bias.shape != (m_out,):
            raise DimensionError(f"bias shape {self.bias.shape} does not match m_out={m_out}")
        if self.stride < 1 or self.padding < 0:
            raise ConfigurationError(f"invalid stride={self.stride} / padding={self.padding}")

    @property
    def m_out(self) -> int:
        return self.filters.shape[0]

    @property
    def m_in(self) -> int:
        return self.filters.shape[1]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.filters.shape[2], self.filters.shape[3]
