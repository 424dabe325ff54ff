"""Scene container: an ordered collection of raw Gaussian parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sh import SUPPORTED_ORDERS, n_sh_bases

FIELD_NAMES = ("mu", "scale_log", "rot_raw", "opacity_logit", "sh")


@dataclass
class GaussianCloud:
    """Raw (pre-activation) parameters for N Gaussians at a fixed SH order.

    Shapes: mu (N,3), scale_log (N,3), rot_raw (N,4) in (w,x,y,z) order,
    opacity_logit (N,), sh (N, 3, (k+1)^2).
    """

    mu: np.ndarray
    scale_log: np.ndarray
    rot_raw: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray
    sh_order: int

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.scale_log = np.asarray(self.scale_log, dtype=float)
        self.rot_raw = np.asarray(self.rot_raw, dtype=float)
        self.opacity_logit = np.asarray(self.opacity_logit, dtype=float)
        self.sh = np.asarray(self.sh, dtype=float)
        self.validate()

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    def validate(self):
        if self.sh_order not in SUPPORTED_ORDERS:
            raise ValueError(f"unsupported SH order {self.sh_order}")
        n = self.mu.shape[0]
        b = n_sh_bases(self.sh_order)
        expect = {
            "mu": (n, 3),
            "scale_log": (n, 3),
            "rot_raw": (n, 4),
            "opacity_logit": (n,),
            "sh": (n, 3, b),
        }
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            mu=self.mu.copy(),
            scale_log=self.scale_log.copy(),
            rot_raw=self.rot_raw.copy(),
            opacity_logit=self.opacity_logit.copy(),
            sh=self.sh.copy(),
            sh_order=self.sh_order,
        )

    def take(self, indices) -> "GaussianCloud":
        """Sub-cloud of the given point indices, order preserved."""
        indices = np.asarray(indices)
        return GaussianCloud(
            mu=self.mu[indices],
            scale_log=self.scale_log[indices],
            rot_raw=self.rot_raw[indices],
            opacity_logit=self.opacity_logit[indices],
            sh=self.sh[indices],
            sh_order=self.sh_order,
        )

    def allclose(self, other: "GaussianCloud", rtol=0.0, atol=0.0) -> bool:
        if self.sh_order != other.sh_order or self.n != other.n:
            return False
        return all(
            np.allclose(getattr(self, f), getattr(other, f), rtol=rtol, atol=atol)
            for f in FIELD_NAMES
        )


@dataclass
class CloudGradients:
    """dL/d(raw parameter) buffers, mirroring GaussianCloud shapes."""

    mu: np.ndarray
    scale_log: np.ndarray
    rot_raw: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray

    @classmethod
    def zeros_like(cls, cloud: GaussianCloud) -> "CloudGradients":
        return cls(
            mu=np.zeros_like(cloud.mu),
            scale_log=np.zeros_like(cloud.scale_log),
            rot_raw=np.zeros_like(cloud.rot_raw),
            opacity_logit=np.zeros_like(cloud.opacity_logit),
            sh=np.zeros_like(cloud.sh),
        )

    def validate_against(self, cloud: GaussianCloud):
        for name in FIELD_NAMES:
            g = getattr(self, name)
            p = getattr(cloud, name)
            if g.shape != p.shape:
                raise ValueError(f"gradient {name} shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise ValueError(f"gradient {name} contains non-finite entries")

    def scatter_to(self, indices, n_total: int) -> "CloudGradients":
        """Map gradients of a sub-cloud back to the full cloud's indices.

        Points absent from ``indices`` receive exactly zero.
        """
        out = CloudGradients(
            mu=np.zeros((n_total, 3)),
            scale_log=np.zeros((n_total, 3)),
            rot_raw=np.zeros((n_total, 4)),
            opacity_logit=np.zeros(n_total),
            sh=np.zeros((n_total,) + self.sh.shape[1:]),
        )
        for name in FIELD_NAMES:
            getattr(out, name)[indices] = getattr(self, name)
        return out
