"""Self-contained 64-bit PRNG so workloads replay identically everywhere.

The generator is xorshift64* (Marsaglia xorshift with a multiplicative
finalizer).  State update per draw, on 64-bit unsigned integers:

    x ^= x >> 12
    x ^= x << 25
    x ^= x >> 27
    output = x * 0x2545F4914F6CDD1D

Seeds pass through one splitmix64 step so that seed 0 (and other small
seeds) still produce a nonzero, well-mixed state.
"""

MASK64 = (1 << 64) - 1

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 step: mixes x into a uniformly scrambled 64-bit value."""
    x = (x + _SPLITMIX_GAMMA) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, label: int) -> int:
    """Derive an independent stream seed from (seed, label), deterministically."""
    return splitmix64((seed & MASK64) ^ ((label * _SPLITMIX_GAMMA) & MASK64))


class Xorshift64Star:
    """Seedable xorshift64* stream with the few draw shapes the simulator needs."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = splitmix64(seed & MASK64)
        if self._state == 0:
            # xorshift state must be nonzero; splitmix64(x)==0 for exactly one x
            self._state = _SPLITMIX_GAMMA

    def u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x = (x ^ (x << 25)) & MASK64
        x ^= x >> 27
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def random(self) -> float:
        """Float in [0, 1) built from the top 53 bits of one draw."""
        return (self.u64() >> 11) * (1.0 / (1 << 53))

    def randrange(self, n: int) -> int:
        """Integer in [0, n).  Modulo bias is below 2**-40 for any n < 2**24."""
        if n <= 0:
            raise ValueError("randrange() needs n >= 1")
        return self.u64() % n

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi], both ends inclusive."""
        if hi < lo:
            raise ValueError("randint() needs lo <= hi")
        return lo + self.randrange(hi - lo + 1)
