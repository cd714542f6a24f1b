"""Turn a potential field into laminar channels and laminar label maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DimsMismatch, InvalidArgument
from .volume import GridDims, LabelField3D, ScalarField3D

DEFAULT_BETA = 10.0
DEFAULT_BANDS = ((-0.3, -0.2), (0.0, 0.1), (0.1, 0.2), (0.2, 0.3), (0.3, 0.4), (0.4, 0.5),
                 (0.5, 0.6), (0.6, 0.7), (0.7, 0.8), (0.8, 0.95), (0.95, 1.05))


@dataclass(frozen=True)
class BandSpec:
    beta: float = DEFAULT_BETA
    bands: tuple = field(default=DEFAULT_BANDS)

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidArgument(f"beta must be positive, got {self.beta!r}")
        bands = tuple((float(lo), float(hi)) for lo, hi in self.bands)
        if not bands:
            raise InvalidArgument("at least one band is required")
        for lo, hi in bands:
            if not lo < hi:
                raise InvalidArgument(f"band ({lo}, {hi}) needs t_lower < t_upper")
        if any(a[0] > b[0] for a, b in zip(bands, bands[1:])):
            raise InvalidArgument("bands must be sorted by lower threshold")
        object.__setattr__(self, "bands", bands)

    @property
    def n_channels(self) -> int:
        return len(self.bands)

    @classmethod
    def parse(cls, text: str, beta: float = DEFAULT_BETA) -> "BandSpec":
        """Parse ``"lo:hi,lo:hi,..."``."""
        try:
            bands = [tuple(float(v) for v in item.split(":")) for item in text.split(",")]
        except ValueError:
            raise InvalidArgument(f"cannot parse band list {text!r}") from None
        if any(len(b) != 2 for b in bands):
            raise InvalidArgument(f"cannot parse band list {text!r}")
        return cls(beta, tuple(bands))

    def format(self) -> str:
        return ",".join(f"{lo:g}:{hi:g}" for lo, hi in self.bands)


def _values(phi):
    return np.asarray(phi.values if isinstance(phi, ScalarField3D) else phi, dtype=np.float64)


def band_response(x, beta: float, t_lower: float, t_upper: float):
    """``sigmoid(beta*(x - t_lower)) * sigmoid(-beta*(x - t_upper))`` on raw arrays."""
    if not t_lower < t_upper:
        raise InvalidArgument(f"band ({t_lower}, {t_upper}) needs t_lower < t_upper")
    x = np.asarray(x, dtype=np.float64)
    return expit(beta * (x - t_lower)) * expit(-beta * (x - t_upper))


def band_derivative(x, beta: float, t_lower: float, t_upper: float):
    """d/dx of :func:`band_response`, ``beta * f * (s_upper - s_lower)``."""
    x = np.asarray(x, dtype=np.float64)
    lo = expit(beta * (x - t_lower))
    hi = expit(-beta * (x - t_upper))
    # d(lo)/dx = beta*lo*(1-lo), d(hi)/dx = -beta*hi*(1-hi)
    return beta * lo * hi * ((1.0 - lo) - (1.0 - hi))


def band_filter(phi: ScalarField3D, beta: float, t_lower: float, t_upper: float) -> ScalarField3D:
    return ScalarField3D(phi.dims, band_response(phi.values, beta, t_lower, t_upper))


def soft_one_hot(phi, spec: BandSpec = BandSpec()) -> np.ndarray:
    """Stack of band responses, shape ``(n_bands, nz, ny, nx)``; not normalised."""
    x = _values(phi)
    return np.stack([band_response(x, spec.beta, lo, hi) for lo, hi in spec.bands])


def soft_one_hot_backward(phi, spec: BandSpec, grad_channels) -> np.ndarray:
    """Pull a gradient on the channel stack back onto the field."""
    x = _values(phi)
    g = np.asarray(grad_channels, dtype=np.float64)
    if g.shape != (spec.n_channels,) + x.shape:
        raise DimsMismatch(f"channel gradient shape {g.shape} does not match the band stack")
    out = np.zeros(x.shape)
    for k, (lo, hi) in enumerate(spec.bands):
        out += g[k] * band_derivative(x, spec.beta, lo, hi)
    return out


def argmax_labels(channels, dims=None) -> LabelField3D:
    """Index of the largest channel per voxel; ties go to the lowest index.

    ``channels`` may be a ``(C, nz, ny, nx)`` array or a list of fields.
    """
    if isinstance(channels, (list, tuple)) and channels and isinstance(channels[0], ScalarField3D):
        dims = channels[0].dims
        channels = np.stack([c.values for c in channels])
    arr = np.asarray(channels)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1, 1, 1)
    if arr.shape[0] < 1:
        raise InvalidArgument("at least one channel is required")
    dims = dims or GridDims.from_shape(arr.shape[1:])
    # np.argmax returns the first maximum
    return LabelField3D(dims, np.argmax(arr, axis=0))


def laminar_bins(phi: ScalarField3D, domain, n_layers: int) -> LabelField3D:
    """Equal-width layers of [0, 1]: layer k (1-based) holds phi in [(k-1)/n, k/n).

    phi == 1 (and anything above) lands in layer n, anything below 0 in
    layer 1.  Voxels outside ``domain`` get 0.
    """
    if int(n_layers) != n_layers or n_layers < 1:
        raise InvalidArgument(f"n_layers must be a positive integer, got {n_layers!r}")
    x = _values(phi)
    domain = np.asarray(domain, dtype=bool)
    if domain.shape != x.shape:
        raise DimsMismatch("domain mask does not match the field")
    layer = np.clip(np.floor(x * n_layers).astype(np.int64), 0, n_layers - 1) + 1
    return LabelField3D(phi.dims, np.where(domain, layer, 0))
