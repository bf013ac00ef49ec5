"""Reference implementation of the seeding, generator and block order.

Prints the constants pinned in test_rng.cpp and test_sampling.cpp. Written
from the published SplitMix64 / xoshiro256** / Lemire descriptions without
looking at the C++ sources' output.
"""

M = (1 << 64) - 1


def mix64(z):
    z = (z + 0x9E3779B97F4A7C15) & M
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
    return z ^ (z >> 31)


def tag_hash(tag):
    h = 0xCBF29CE484222325
    for c in tag.encode():
        h ^= c
        h = (h * 0x100000001B3) & M
    return h


def epoch_seed(seed, epoch):
    return mix64(seed ^ mix64(epoch))


def derive_seed(seed, tag, index):
    return mix64(mix64(seed ^ tag_hash(tag)) ^ mix64((index + 0x632BE59BD9B4E019) & M))


def rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & M


class Xoshiro:
    def __init__(self, seed):
        self.s = []
        x = seed
        for _ in range(4):
            self.s.append(mix64(x))
            x = (x + 0x9E3779B97F4A7C15) & M

    def next(self):
        s = self.s
        result = (rotl((s[1] * 5) & M, 7) * 9) & M
        t = (s[1] << 17) & M
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
        return result

    def below(self, bound):
        if bound <= 1:
            return 0
        x = self.next()
        m = x * bound
        low = m & M
        if low < bound:
            threshold = ((1 << 64) - bound) % bound
            while low < threshold:
                x = self.next()
                m = x * bound
                low = m & M
        return m >> 64


def block_order(n, b, seed, epoch):
    k = (n + b - 1) // b
    blocks = list(range(k))
    rng = Xoshiro(derive_seed(epoch_seed(seed, epoch), "block-order", 0))
    for i in range(k, 1, -1):
        j = rng.below(i)
        blocks[i - 1], blocks[j] = blocks[j], blocks[i - 1]
    order = []
    for blk in blocks:
        order.extend(range(blk * b, min(n, blk * b + b)))
    return order


if __name__ == "__main__":
    print("mix64(0) =", hex(mix64(0)))
    print("tag_hash('block-order') =", hex(tag_hash("block-order")))
    print("epoch_seed(42, 3) =", hex(epoch_seed(42, 3)))
    print("derive_seed(42, 'fetch-shuffle', 5) =", hex(derive_seed(42, "fetch-shuffle", 5)))
    for seed in (0, 42):
        r = Xoshiro(seed)
        print(f"xoshiro({seed}) first 4 =", [hex(r.next()) for _ in range(4)])
    r = Xoshiro(7)
    print("xoshiro(7).below(10) x8 =", [r.below(10) for _ in range(8)])
    print("block_order(n=20, b=3, seed=42, epoch=0) =", block_order(20, 3, 42, 0))
    print("block_order(n=20, b=3, seed=42, epoch=1) =", block_order(20, 3, 42, 1))
