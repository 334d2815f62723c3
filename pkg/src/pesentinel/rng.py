"""SplitMix64, the portable generator behind every seeded draw in the package.

The algorithm is Steele, Lea and Flood's SplitMix64 as published in
Vigna's reference C code::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

all arithmetic modulo 2**64. Derived draws:

* ``below(n)``: unbiased integer in ``[0, n)`` by rejection; a raw draw
  ``x`` is rejected while ``x >= 2**64 - (2**64 % n)``, otherwise ``x % n``.
* ``random()``: ``(next_u64() >> 11) * 2**-53``.
* ``stream(seed, index)``: child generator seeded with
  ``mix64(seed ^ mix64(index + 1))``; used for per-tree streams.
"""

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(z):
    """The SplitMix64 output finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed=0):
        self.state = int(seed) & MASK64

    @classmethod
    def stream(cls, seed, index):
        return cls(mix64((int(seed) & MASK64) ^ mix64(int(index) + 1)))

    def next_u64(self):
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def below(self, n):
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def random(self):
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def sample(self, population, k):
        """k distinct items by partial Fisher-Yates; order is the draw order."""
        pool = list(population)
        if not 0 <= k <= len(pool):
            raise ValueError("sample size out of range")
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def shuffle(self, items):
        """In-place Fisher-Yates, walking from the end."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items
