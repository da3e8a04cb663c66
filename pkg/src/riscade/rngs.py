"""Deterministic RNG stream derivation.

All randomness in the package flows from one master seed. Independent
purposes (sample generation, weight init, shuffling, benchmark noise, ...)
get their own numbered substream so that parallel and serial execution of
the same config produce identical results.
"""
import numpy as np

# Purpose tags for substream derivation. Values are part of the on-disk
# reproducibility contract: do not renumber.
SAMPLE = 1
INIT = 2
SHUFFLE = 3
BENCH_NOISE = 4
POWER = 5
GRADCHECK = 6


def substream(master_seed, *key):
    """Generator for (master_seed, key...). Pure function of its arguments."""
    seq = np.random.SeedSequence(entropy=int(master_seed),
                                 spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)


def complex_normal(rng, shape, var=1.0):
    """Draw i.i.d. CN(0, var) entries: real and imag parts N(0, var/2)."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
