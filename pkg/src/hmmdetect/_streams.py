"""Counter-derived random streams.

Every Monte Carlo trial owns a generator keyed by ``(seed, trial)``. Variates
are pulled in fixed-size blocks (uniforms first, then normals), so a trial's
path never depends on which other trials share its batch or thread.
"""

import numpy as np

BLOCK = 64


def trial_rng(seed, trial, stream=0):
    """Generator for one trial. ``stream=1`` is reserved for detector start draws."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(trial), int(stream)))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


class NoiseBank:
    """Lockstep source of one uniform and one standard normal per row per step."""

    def __init__(self, rngs, block=BLOCK):
        self.rngs = list(rngs)
        self.block = block
        self._pos = block
        n = len(self.rngs)
        self._U = np.empty((n, block))
        self._Z = np.empty((n, block))

    def __len__(self):
        return len(self.rngs)

    def _refill(self):
        for i, g in enumerate(self.rngs):
            self._U[i] = g.random(self.block)
            self._Z[i] = g.standard_normal(self.block)
        self._pos = 0

    def next(self):
        if self._pos == self.block:
            self._refill()
        k = self._pos
        self._pos += 1
        return self._U[:, k], self._Z[:, k]

    def keep(self, mask):
        idx = np.flatnonzero(mask)
        self.rngs = [self.rngs[i] for i in idx]
        self._U = self._U[idx]
        self._Z = self._Z[idx]

    def fixed(self, steps):
        """Materialize the next ``steps`` variates as ``(U, Z)`` arrays of shape (rows, steps)."""
        U = np.empty((len(self), steps))
        Z = np.empty((len(self), steps))
        for t in range(steps):
            U[:, t], Z[:, t] = self.next()
        return U, Z


def trial_bank(seed, trials, stream=0, block=BLOCK):
    return NoiseBank([trial_rng(seed, i, stream) for i in trials], block)
