"""3D distortions applied to a Gaussian cloud during embedding.

Four kinds:
  identity  - bit-identical copy of the cloud
  gn        - additive Gaussian noise on the raw position means only
  dropout   - remove floor(p*N) points chosen uniformly without replacement
  crop      - remove floor(p*N) points as a contiguous index interval, or
              (spatial mode) the extreme fraction along a random coordinate
              axis

Every application also returns the survivor indices into the original
cloud so renderer gradients can be scattered back: removed points get
exactly zero gradient, survivors get the gradient of their distorted
copy (for gn the noise is constant, so the gradient passes through
unchanged).

Specs serialize to a one-line text form, e.g. ``gn:sigma=0.01:seed=7``,
and parse back exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import GaussianCloud

DISTORTION_KINDS = ("identity", "gn", "dropout", "crop")


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    sigma: float = 0.0    # gn only
    p: float = 0.0        # dropout/crop only: removed fraction
    spatial: bool = False  # crop only: cut along a coordinate axis
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DISTORTION_KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        if self.kind == "gn" and self.sigma < 0:
            raise ValueError("gn sigma must be >= 0")
        if self.kind in ("dropout", "crop") and not 0.0 <= self.p < 1.0:
            raise ValueError("removal fraction p must be in [0, 1)")
        if self.spatial and self.kind != "crop":
            raise ValueError("spatial mode applies to crop only")

    def to_line(self) -> str:
        parts = [self.kind]
        if self.kind == "gn":
            parts.append(f"sigma={self.sigma!r}")
        if self.kind in ("dropout", "crop"):
            parts.append(f"p={self.p!r}")
        if self.spatial:
            parts.append("spatial=1")
        if self.kind != "identity":
            parts.append(f"seed={self.seed}")
        return ":".join(parts)

    @staticmethod
    def from_line(line: str) -> "DistortionSpec":
        tokens = line.strip().split(":")
        kind = tokens[0]
        kwargs = {}
        for tok in tokens[1:]:
            if "=" not in tok:
                raise ValueError(f"bad distortion token {tok!r} in {line!r}")
            key, val = tok.split("=", 1)
            if key == "sigma":
                kwargs["sigma"] = float(val)
            elif key == "p":
                kwargs["p"] = float(val)
            elif key == "seed":
                kwargs["seed"] = int(val)
            elif key == "spatial":
                kwargs["spatial"] = bool(int(val))
            else:
                raise ValueError(f"unknown distortion key {key!r} in {line!r}")
        return DistortionSpec(kind=kind, **kwargs)


def apply_distortion(cloud: GaussianCloud, spec: DistortionSpec):
    """Returns (distorted cloud, survivor indices into the original)."""
    n = cloud.n
    all_idx = np.arange(n)
    if spec.kind == "identity":
        return cloud.copy(), all_idx
    if spec.kind == "gn":
        rng = np.random.default_rng(spec.seed)
        out = cloud.copy()
        out.mu = out.mu + rng.normal(0.0, spec.sigma, size=out.mu.shape)
        return out, all_idx
    n_remove = int(np.floor(spec.p * n))
    if n_remove >= n:
        raise ValueError(f"distortion would remove all {n} points")
    if n_remove == 0:
        return cloud.copy(), all_idx
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "dropout":
        removed = rng.choice(n, size=n_remove, replace=False)
        keep = np.setdiff1d(all_idx, removed)  # sorted, original order kept
    elif spec.kind == "crop" and not spec.spatial:
        start = int(rng.integers(0, n - n_remove + 1))
        keep = np.concatenate([all_idx[:start], all_idx[start + n_remove:]])
    else:  # spatial crop: drop the extreme fraction along a random axis
        axis = int(rng.integers(0, 3))
        low_side = bool(rng.integers(0, 2))
        order = np.argsort(cloud.mu[:, axis], kind="stable")
        removed = order[:n_remove] if low_side else order[n - n_remove:]
        keep = np.setdiff1d(all_idx, removed)
    return cloud.take(keep), keep


@dataclass(frozen=True)
class DistortionPolicy:
    """Sampling pool for training-time distortions.

    ``probs`` empty means uniform over ``kinds``.
    """

    kinds: tuple = DISTORTION_KINDS
    probs: tuple = ()
    sigma: float = 0.01
    p: float = 0.10
    spatial_crop: bool = False

    def __post_init__(self):
        for k in self.kinds:
            if k not in DISTORTION_KINDS:
                raise ValueError(f"unknown distortion kind {k!r}")
        if not self.kinds:
            raise ValueError("policy needs at least one kind")
        if self.probs:
            if len(self.probs) != len(self.kinds):
                raise ValueError("probs must have one entry per kind")
            if min(self.probs) < 0 or abs(sum(self.probs) - 1.0) > 1e-9:
                raise ValueError("probs must be nonnegative and sum to 1")


def sample_distortion(policy: DistortionPolicy, rng) -> DistortionSpec:
    if policy.probs:
        kind = policy.kinds[int(rng.choice(len(policy.kinds), p=np.asarray(policy.probs)))]
    else:
        kind = policy.kinds[int(rng.integers(0, len(policy.kinds)))]
    seed = int(rng.integers(0, 2**31 - 1))
    if kind == "gn":
        return DistortionSpec("gn", sigma=policy.sigma, seed=seed)
    if kind == "dropout":
        return DistortionSpec("dropout", p=policy.p, seed=seed)
    if kind == "crop":
        return DistortionSpec("crop", p=policy.p, seed=seed,
                              spatial=policy.spatial_crop)
    return DistortionSpec("identity")
