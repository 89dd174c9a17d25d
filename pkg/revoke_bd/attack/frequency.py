"""
Orthonormal 2-D DCT and low-frequency masking.

The DCT is applied as two matrix products with the orthonormal type-II basis
(built once per size with scipy.fft), which keeps it differentiable in torch
and exact up to float rounding.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Union

import numpy as np
import scipy.fft
import torch

from ..errors import ContractError, NumericalFaultError


@lru_cache(maxsize=None)
def _dct_basis(n: int) -> np.ndarray:
    # Column j is the DCT of the j-th unit vector, so y = basis @ x
    return scipy.fft.dct(np.eye(n), type=2, norm='ortho', axis=0)


def dct_matrix(n: int, dtype: torch.dtype = torch.float32,
               device: Optional[torch.device] = None) -> torch.Tensor:
    return torch.as_tensor(_dct_basis(n), dtype=dtype, device=device)


def _require_finite(x: torch.Tensor, what: str):
    if not bool(torch.isfinite(x).all()):
        raise NumericalFaultError(f"Non-finite values in {what}")


def dct2(image: torch.Tensor) -> torch.Tensor:
    """Per-channel 2-D orthonormal DCT-II over the last two dimensions."""
    _require_finite(image, "dct2 input")
    h, w = image.shape[-2:]
    dh = dct_matrix(h, image.dtype, image.device)
    dw = dct_matrix(w, image.dtype, image.device)
    return dh @ image @ dw.T


def idct2(coefficients: torch.Tensor) -> torch.Tensor:
    """Inverse of dct2."""
    _require_finite(coefficients, "idct2 input")
    h, w = coefficients.shape[-2:]
    dh = dct_matrix(h, coefficients.dtype, coefficients.device)
    dw = dct_matrix(w, coefficients.dtype, coefficients.device)
    return dh.T @ coefficients @ dw


def retained_extent(ratio: float, size: int) -> int:
    """Number of leading coefficients kept along one axis: ceil(ratio * size)."""
    # round() first so 0.5 * 32 stays 16 instead of creeping to 17
    return int(math.ceil(round(ratio * size, 9)))


@dataclass(frozen=True, eq=False)
class FrequencyMask:
    """Binary (H, W) mask over DCT coefficients, shared by all channels."""
    values: torch.Tensor
    ratio: Optional[float] = None

    @classmethod
    def low_pass(cls, ratio: float, height: int, width: int) -> 'FrequencyMask':
        """m[u, v] = 1 iff u < ceil(r*H) and v < ceil(r*W)."""
        if not 0 < ratio <= 1:
            raise ContractError(f"mask ratio must be in (0, 1], got {ratio}")
        values = torch.zeros(height, width)
        values[:retained_extent(ratio, height), :retained_extent(ratio, width)] = 1.0
        return cls(values=values, ratio=ratio)

    @property
    def shape(self):
        return tuple(self.values.shape)

    @property
    def support(self) -> int:
        """Retained coefficients per channel."""
        return int(self.values.sum().item())


def filter_noise(noise: torch.Tensor, mask: Union[FrequencyMask, torch.Tensor]) -> torch.Tensor:
    """IDCT(m * DCT(noise)): keep only the masked frequency block."""
    values = mask.values if isinstance(mask, FrequencyMask) else mask
    if tuple(noise.shape[-2:]) != tuple(values.shape):
        raise ContractError(f"noise spatial shape {tuple(noise.shape[-2:])} does not match "
                            f"mask shape {tuple(values.shape)}")
    values = values.to(dtype=noise.dtype, device=noise.device)
    return idct2(values * dct2(noise))
