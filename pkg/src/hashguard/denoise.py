"""Denoising transforms used by criterion 3 and the white-box attack.

The mean blur is a linear map, so its exact input gradient is the transpose
of that map; no approximation is needed when attacking through it.  The
transpose matrix is built once per image shape by pushing basis vectors
through the blur, then cached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class DenoiserSpec:
    kind: str = "mean_blur"  # "mean_blur" | "identity"
    size: int = 3
    padding: str = "reflect"
    image_shape: tuple = (16, 16, 3)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "size": self.size,
            "padding": self.padding,
            "image_shape": list(self.image_shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserSpec":
        return cls(d["kind"], d["size"], d["padding"], tuple(d["image_shape"]))


def _blur_images(images: np.ndarray, size: int, padding: str) -> np.ndarray:
    """Per-channel box blur over (..., H, W, C) with numpy-style padding."""
    r = size // 2
    pad = [(0, 0)] * (images.ndim - 3) + [(r, r), (r, r), (0, 0)]
    padded = np.pad(images, pad, mode=padding)
    out = np.zeros_like(images, dtype=np.float64)
    h, w = images.shape[-3], images.shape[-2]
    for di in range(size):
        for dj in range(size):
            out += padded[..., di : di + h, dj : dj + w, :]
    return out / (size * size)


class Denoiser:
    """Flat-vector interface over the configured transform.

    apply() blurs a batch of flattened images; vjp() multiplies by the exact
    transpose of the underlying linear map.
    """

    def __init__(self, spec: DenoiserSpec):
        if spec.kind not in ("mean_blur", "identity"):
            raise ConfigError(f"unknown denoiser kind {spec.kind!r}")
        if spec.kind == "mean_blur" and spec.size % 2 == 0:
            raise ConfigError("mean blur size must be odd")
        self.spec = spec
        self.dim = int(np.prod(spec.image_shape))
        self._bt = None  # transpose of the blur matrix, rows = blurred basis vectors

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.spec.kind == "identity":
            return x.copy()
        flat = x.reshape(-1, self.dim)
        images = flat.reshape((-1,) + self.spec.image_shape)
        blurred = _blur_images(images, self.spec.size, self.spec.padding)
        return blurred.reshape(x.shape)

    def vjp(self, grad: np.ndarray) -> np.ndarray:
        """Transpose of the blur applied to an upstream gradient batch.

        Reflect padding makes the blur matrix asymmetric at the borders, so
        the adjoint is not the blur itself.
        """
        grad = np.asarray(grad, dtype=np.float64)
        if self.spec.kind == "identity":
            return grad.copy()
        flat = grad.reshape(-1, self.dim)
        out = flat @ self.matrix()  # row form of B^T g
        return out.reshape(grad.shape)

    def matrix(self) -> np.ndarray:
        """Dense matrix B of the linear map, column j = blur of basis j."""
        if self._bt is None:
            self._bt = np.ascontiguousarray(self.apply(np.eye(self.dim)))
        return self._bt.T
