"""The shared 6-neighbour averaging stencil.

Both the hard solver and the differentiable soft solver relax voxels with
``(1 - omega) * x + omega * mean(neighbours)``.  Neighbours outside the grid
and neighbours outside ``member`` are left out of the mean, so the divisor is
the per-voxel count of contributing neighbours rather than a fixed 6.

Sums are accumulated in the fixed order -x, +x, -y, +y, -z, +z.  Work is
split into z-slabs for the thread pool; every voxel is computed by the same
expression regardless of the split, so results do not depend on ``threads``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

# (dz, dy, dx) in summation order
FACE_OFFSETS = ((0, 0, -1), (0, 0, 1), (0, -1, 0), (0, 1, 0), (-1, 0, 0), (1, 0, 0))


def _slabs(nz: int, threads: int):
    threads = max(1, min(int(threads), nz))
    bounds = np.linspace(0, nz, threads + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


class Stencil:
    """Face-neighbour sums restricted to a member mask.

    Parameters
    ----------
    member : bool ndarray, shape (nz, ny, nx)
        Voxels allowed to contribute to a neighbour's average.
    threads : int
        Number of z-slabs processed concurrently.
    """

    def __init__(self, member: np.ndarray, threads: int = 1):
        member = np.asarray(member, dtype=bool)
        self.shape = member.shape
        self.member = member
        self.all_members = bool(member.all())
        self.threads = max(1, int(threads))
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None
        self._pad = np.zeros(tuple(n + 2 for n in self.shape))
        self.count = self._sum_padded(member.astype(np.float64))
        # avoids 0/0 at voxels that are never relaxed
        self.safe_count = np.where(self.count > 0, self.count, 1.0)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _run(self, fn):
        slabs = _slabs(self.shape[0], self.threads)
        if self._pool is None or len(slabs) == 1:
            for a, b in slabs:
                fn(a, b)
        else:
            list(self._pool.map(lambda ab: fn(*ab), slabs))

    def _sum_padded(self, values: np.ndarray) -> np.ndarray:
        pad = self._pad
        pad[1:-1, 1:-1, 1:-1] = values
        out = np.empty(self.shape)

        def work(a, b):
            za, zb = a + 1, b + 1
            out[a:b] = (pad[za:zb, 1:-1, :-2] + pad[za:zb, 1:-1, 2:]
                        + pad[za:zb, :-2, 1:-1] + pad[za:zb, 2:, 1:-1]
                        + pad[za - 1:zb - 1, 1:-1, 1:-1] + pad[za + 1:zb + 1, 1:-1, 1:-1])

        self._run(work)
        return out

    def neighbor_sum(self, phi: np.ndarray) -> np.ndarray:
        """Sum of member face-neighbour values at every voxel."""
        if self.all_members:
            return self._sum_padded(phi)
        return self._sum_padded(np.where(self.member, phi, 0.0))

    def relax(self, phi: np.ndarray, omega: float) -> np.ndarray:
        """SOR candidate ``(1-omega)*phi + omega*mean`` at every voxel."""
        return (1.0 - omega) * phi + omega * (self.neighbor_sum(phi) / self.safe_count)

    def mean_transpose(self, g: np.ndarray) -> np.ndarray:
        """Adjoint of ``phi -> neighbor_sum(phi) / count``.

        ``g`` must vanish where the mean was not used (count 0 voxels are
        never relaxed).
        """
        s = self._sum_padded(g / self.safe_count)
        if self.all_members:
            return s
        return np.where(self.member, s, 0.0)


# 26-neighbourhood offsets (dz, dy, dx), lexicographic order, centre excluded
NEIGHBOR26 = tuple((dz, dy, dx)
                   for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
                   if (dz, dy, dx) != (0, 0, 0))


def neighbor26_sum(values: np.ndarray) -> np.ndarray:
    """Sum over the in-grid 26-neighbourhood of every voxel."""
    nz, ny, nx = values.shape
    pad = np.zeros((nz + 2, ny + 2, nx + 2))
    pad[1:-1, 1:-1, 1:-1] = values
    out = np.zeros(values.shape)
    for dz, dy, dx in NEIGHBOR26:
        out += pad[1 + dz:1 + dz + nz, 1 + dy:1 + dy + ny, 1 + dx:1 + dx + nx]
    return out
