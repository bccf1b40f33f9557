"""Seedable 64-bit generator used for delay schedules and jitter sampling.

This is the splitmix-style mixer: a 64-bit Weyl sequence fed through two
multiply-xorshift rounds.  It is tiny, fully portable and has no hidden
state, which keeps saved metadata sufficient to reproduce a run bit for bit.
"""

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Stream tweak applied to the seed for the per-packet jitter stream so that
# jitter draws never reuse the delay-schedule coin flips.
JITTER_STREAM = 0x6A09E667F3BCC909


class SplitMix64:
    """Deterministic generator producing 64-bit unsigned integers."""

    __slots__ = ('state',)

    def __init__(self, seed):
        self.state = seed & MASK64

    def next_u64(self):
        self.state = (self.state + _GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & MASK64
        return (z ^ (z >> 31)) & MASK64

    def coin(self):
        """Fair coin: True on odd draws."""
        return bool(self.next_u64() & 1)

    def uniform_int(self, lo, hi):
        """Uniform integer in [lo, hi].  Modulo bias is negligible here
        because ranges are tiny compared to 2**64."""
        if hi < lo:
            raise ValueError('empty range [%d, %d]' % (lo, hi))
        return lo + self.next_u64() % (hi - lo + 1)
