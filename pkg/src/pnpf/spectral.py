"""Periodic pseudo-spectral toolbox on the torus [0, L)^dim.

Real fields are stored either on the collocation grid (shape (M,)*dim) or
as half-complex spectra from ``numpy.fft.rfftn`` (last axis M//2 + 1).
Integer mode numbers n_j run over [-M/2, M/2); the physical wavenumber is
xi_j = (2*pi/L) * n_j.

Two conventions make every operator identity in this module exact to
rounding instead of merely accurate:

* Nyquist planes (|n_j| = M/2) are zeroed whenever a field enters spectral
  form.  The Nyquist mode of an even-length real FFT carries no sign
  information for odd derivatives, so keeping it breaks div(grad) == lap.
* Sobolev weights use the exact multi-index sum
  w_s(xi) = sum_{|alpha| <= s} prod_j xi_j^(2*alpha_j),
  not the equivalent-norm surrogate (1 + |xi|^2)^s.

Norms follow the quadrature normalization
``|f|^2 = L^dim / M^(2*dim) * sum_modes weight * w_s * |fhat|^2`` with
Hermitian weights 2 on the interior of the half-spectrum, which agrees
with the trapezoidal rule on the grid (discrete Parseval).
"""

from __future__ import annotations

from itertools import product as _cartesian

import numpy as np

__all__ = [
    "Grid",
    "gradient",
    "divergence",
    "laplacian",
    "inverse_neg_laplacian",
    "leray_project",
    "dealias",
    "sobolev_multiplier",
    "sobolev_norm_sq",
    "inner_product",
    "mean_value",
]

#: relative mean tolerance for inverting -Laplace (the mean is not invertible)
MEAN_RTOL = 1e-10


class Grid:
    """Collocation/spectral grid with M modes per axis on [0, L)^dim.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 to 3.
    modes : int
        Modes per axis M; must be even and at least 4.
    length : float, optional
        Box edge length L (default 2*pi).
    """

    def __init__(self, dim, modes, length=2.0 * np.pi):
        if dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
        modes = int(modes)
        if modes < 4 or modes % 2:
            raise ValueError(f"modes must be even and >= 4, got {modes}")
        if not (np.isfinite(length) and length > 0):
            raise ValueError(f"length must be positive, got {length}")
        self.dim = dim
        self.modes = modes
        self.length = float(length)
        self.shape = (modes,) * dim
        self.spectral_shape = (modes,) * (dim - 1) + (modes // 2 + 1,)

        # integer mode numbers along each axis, broadcastable over the
        # spectral shape; the last axis is the half (rfft) axis
        scale = 2.0 * np.pi / self.length
        self._n_axes = []
        self.xi = []
        for ax in range(dim):
            if ax == dim - 1:
                n = np.fft.rfftfreq(modes, d=1.0 / modes)
            else:
                n = np.fft.fftfreq(modes, d=1.0 / modes)
            bshape = [1] * dim
            bshape[ax] = n.size
            n = n.reshape(bshape)
            self._n_axes.append(n)
            self.xi.append(scale * n)
        self.xi_sq = sum(x * x for x in self.xi)

        nyq = modes // 2
        keep = np.ones(self.spectral_shape, dtype=bool)
        for n in self._n_axes:
            keep &= np.abs(n) != nyq
        self._nyquist_keep = keep

        cutoff = modes / 3.0
        mask = np.ones(self.spectral_shape, dtype=bool)
        for n in self._n_axes:
            mask &= np.abs(n) <= cutoff
        self.dealias_mask = mask & keep

        # Hermitian multiplicity of each stored rfft mode: the interior of
        # the half axis represents a conjugate pair on the full spectrum
        r = self._n_axes[-1]
        self.hermitian_weights = np.where((r > 0) & (r < nyq), 2.0, 1.0)

        self.norm_factor = self.length**dim / float(modes) ** (2 * dim)
        self._multiplier_cache = {}

    def __repr__(self):
        return f"Grid(dim={self.dim}, modes={self.modes}, length={self.length:g})"

    def points(self):
        """Coordinate arrays of the collocation points ('ij' indexing)."""
        x = np.arange(self.modes) * (self.length / self.modes)
        return np.meshgrid(*([x] * self.dim), indexing="ij")

    def to_spectral(self, f):
        """Forward real FFT over the trailing dim axes, Nyquist planes zeroed."""
        f = np.asarray(f, dtype=float)
        if f.shape[-self.dim:] != self.shape:
            raise ValueError(f"field shape {f.shape} does not end in {self.shape}")
        axes = tuple(range(-self.dim, 0))
        return np.fft.rfftn(f, axes=axes) * self._nyquist_keep

    def to_physical(self, fh):
        """Inverse real FFT back to the collocation grid."""
        fh = np.asarray(fh)
        if fh.shape[-self.dim:] != self.spectral_shape:
            raise ValueError(
                f"spectrum shape {fh.shape} does not end in {self.spectral_shape}"
            )
        axes = tuple(range(-self.dim, 0))
        return np.fft.irfftn(fh, s=self.shape, axes=axes)

    def random_field(self, rng, band=None, rms=1.0):
        """Zero-mean random real field with unit-variance coefficients.

        Spectral coefficients inside |n_j| <= band are iid complex normal
        (band defaults to the dealias cutoff M/3) and everything else is
        zero; the field is rescaled to the requested root-mean-square.
        """
        if band is None:
            cutoff = self.modes / 3.0
        else:
            cutoff = float(band)
        fh = self.to_spectral(rng.standard_normal(self.shape))
        mask = np.ones(self.spectral_shape, dtype=bool)
        for n in self._n_axes:
            mask &= np.abs(n) <= cutoff
        fh *= mask
        fh[(0,) * self.dim] = 0.0
        f = self.to_physical(fh)
        scale = np.sqrt(np.mean(f * f))
        if scale > 0:
            f *= rms / scale
        return f


def gradient(grid, fh):
    """Spectral gradient; prepends a component axis of length dim."""
    return np.stack([1j * grid.xi[ax] * fh for ax in range(grid.dim)])


def divergence(grid, vh):
    """Spectral divergence of a field with leading component axis."""
    if vh.shape[0] != grid.dim:
        raise ValueError(f"expected {grid.dim} components, got {vh.shape[0]}")
    return sum(1j * grid.xi[ax] * vh[ax] for ax in range(grid.dim))


def laplacian(grid, fh):
    """Spectral Laplacian (multiplication by -|xi|^2)."""
    return -grid.xi_sq * fh


def inverse_neg_laplacian(grid, fh):
    """Solve -lap(u) = f for the zero-mean solution u.

    The input must be (numerically) mean free: |mean| <= 1e-10 * rms is
    enforced because the constant mode lies in the kernel.
    """
    mean_coeff = np.abs(fh[(Ellipsis,) + (0,) * grid.dim])
    total = np.sqrt(
        np.sum(grid.hermitian_weights * np.abs(fh) ** 2, axis=tuple(range(-grid.dim, 0)))
    )
    if np.any(mean_coeff > MEAN_RTOL * total):
        raise ValueError(
            "field has a nonzero mean; -laplace is only invertible on "
            "mean-free fields"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        out = fh / grid.xi_sq
    out = np.where(grid.xi_sq == 0.0, 0.0, out)
    return out


def leray_project(grid, vh):
    """Project a vector spectrum onto divergence-free fields.

    Applies I - xi xi^T / |xi|^2 mode by mode; the mean (xi = 0) passes
    through unchanged.  In one dimension the projection annihilates every
    nonzero mode, so only the mean survives.
    """
    if vh.shape[0] != grid.dim:
        raise ValueError(f"expected {grid.dim} components, got {vh.shape[0]}")
    xiv = sum(grid.xi[ax] * vh[ax] for ax in range(grid.dim))
    with np.errstate(divide="ignore", invalid="ignore"):
        coeff = xiv / grid.xi_sq
    coeff = np.where(grid.xi_sq == 0.0, 0.0, coeff)
    return np.stack([vh[ax] - grid.xi[ax] * coeff for ax in range(grid.dim)])


def dealias(grid, fh):
    """Zero all modes outside the 2/3-rule band |n_j| <= M/3."""
    return fh * grid.dealias_mask


def sobolev_multiplier(grid, s):
    """Exact H^s weight w_s(xi) = sum over multi-indices |alpha| <= s of
    prod_j xi_j^(2 alpha_j), cached per grid and order."""
    s = int(s)
    if s < 0:
        raise ValueError(f"order must be nonnegative, got {s}")
    cached = grid._multiplier_cache.get(s)
    if cached is not None:
        return cached
    w = np.zeros(grid.spectral_shape)
    for alpha in _cartesian(*([range(s + 1)] * grid.dim)):
        if sum(alpha) > s:
            continue
        term = np.ones(grid.spectral_shape)
        for ax, a in enumerate(alpha):
            if a:
                term = term * grid.xi[ax] ** (2 * a)
        w += term
    grid._multiplier_cache[s] = w
    return w


def sobolev_norm_sq(grid, fh, s=0):
    """Squared H^s norm of a spectrum; leading component axes are summed."""
    w = grid.hermitian_weights * sobolev_multiplier(grid, s)
    return grid.norm_factor * float(np.sum(w * np.abs(fh) ** 2))


def inner_product(grid, fh, gh):
    """L^2 pairing <f, g> of two real-field spectra (component axes summed)."""
    w = grid.hermitian_weights
    return grid.norm_factor * float(np.sum(w * (np.conj(fh) * gh).real))


def mean_value(grid, fh):
    """Mean of the field represented by a spectrum."""
    zero = (Ellipsis,) + (0,) * grid.dim
    return np.real(fh[zero]) / float(grid.modes) ** grid.dim
