"""
Counter-based seed derivation for iterations, bootstraps and redraws.

derive_seed(master, stream) hashes the pair through numpy's SeedSequence
and returns the first generated 64-bit word with its top bit cleared
(seeds fit a signed 64-bit column). The mapping only
depends on SeedSequence's documented hashing, so it is stable across
releases. Generators are Philox (counter-based) streams keyed by a seed.
"""
import numpy as np

_MASK64 = (1 << 64) - 1
_MASK63 = (1 << 63) - 1


def derive_seed(master: int, stream: int) -> int:
    """
    Derive a child seed from (master, stream)

    Args:
        master: 64-bit parent seed
        stream: 64-bit stream index (iteration, bootstrap or redraw counter)

    Returns:
        63-bit child seed
    """
    ss = np.random.SeedSequence([int(master) & _MASK64, int(stream) & _MASK64])
    return int(ss.generate_state(1, dtype=np.uint64)[0]) & _MASK63


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed) & _MASK64)))


def iteration_seed(master: int, iteration: int) -> int:
    return derive_seed(master, iteration)


def bootstrap_seed(iteration_seed_value: int, bootstrap: int, attempt: int = 0) -> int:
    """Seed for bootstrap b; redraw attempts > 0 split once more"""
    seed = derive_seed(iteration_seed_value, bootstrap)
    if attempt:
        seed = derive_seed(seed, attempt)
    return seed
