"""Input validation for cubes, masks and measurements."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .tensor import DimensionError


def check_cube(cube, name: str = "cube", dtype=np.float32) -> np.ndarray:
    arr = check_array(cube, ensure_2d=False, allow_nd=True, dtype=dtype, input_name=name)
    if arr.ndim != 3:
        raise DimensionError(f"{name} must be H x W x N, got shape {arr.shape}")
    return arr


def check_cubes(cubes, name: str = "X", dtype=np.float32) -> np.ndarray:
    """Accept one ``H x W x N`` cube or a stack ``n x H x W x N``; always return the stack."""
    arr = check_array(np.asarray(cubes), ensure_2d=False, allow_nd=True, dtype=dtype, input_name=name)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise DimensionError(f"{name} must be (n, H, W, N), got shape {arr.shape}")
    return arr


def check_mask(mask, shape: tuple[int, int] | None = None, dtype=np.float32) -> np.ndarray:
    arr = check_array(mask, dtype=dtype, input_name="mask")
    if shape is not None and arr.shape != tuple(shape):
        raise DimensionError(f"mask shape {arr.shape} does not match {tuple(shape)}")
    return arr


def check_measurements(y, width: int | None = None, dtype=np.float32) -> np.ndarray:
    """One ``H x W'`` snapshot or a stack ``n x H x W'``; returns the stack."""
    arr = check_array(np.asarray(y), ensure_2d=False, allow_nd=True, dtype=dtype, input_name="Y")
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DimensionError(f"measurements must be (n, H, W'), got shape {arr.shape}")
    if width is not None and arr.shape[2] != width:
        raise DimensionError(f"measurement width {arr.shape[2]} != expected {width}")
    return arr
