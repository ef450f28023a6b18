"""Smoke test for the currikit Python extension.

Build the extension first:

    cargo build --release -p currikit-py

then run `python3 python/smoke_test.py`. The built library is located under
target/ (or taken from $CURRIKIT_SO) and copied next to a temporary
`currikit.so` so it can be imported without an install step.
"""

import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
MASK64 = (1 << 64) - 1


def find_library():
    env = os.environ.get("CURRIKIT_SO")
    if env:
        return Path(env)
    for profile in ("release", "debug"):
        for name in ("libcurrikit_py.so", "libcurrikit_py.dylib"):
            p = ROOT / "target" / profile / name
            if p.exists():
                return p
    sys.exit("extension not built: run `cargo build -p currikit-py` first")


def import_currikit(tmp):
    shutil.copy(find_library(), Path(tmp) / "currikit.so")
    sys.path.insert(0, tmp)
    import currikit

    return currikit


# Independent re-implementation of the documented generator and shuffle.
GAMMA = 0x9E3779B97F4A7C15


def finalize(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64(x):
    return finalize((x + GAMMA) & MASK64)


def fnv1a64(data):
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


class Ref:
    def __init__(self, seed):
        self.state = seed & MASK64

    @classmethod
    def stream(cls, seed, name, keys):
        h = mix64(seed ^ fnv1a64(name.encode()))
        for k in keys:
            h = mix64(h ^ k)
        return cls(h)

    def next_u64(self):
        self.state = (self.state + GAMMA) & MASK64
        return finalize(self.state)

    def below(self, n):
        return (self.next_u64() * n) >> 64

    def shuffle(self, items):
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def check(cond, what):
    print(("PASS" if cond else "FAIL") + "  " + what)
    if not cond:
        check.failed = True


check.failed = False


def main():
    with tempfile.TemporaryDirectory() as tmp:
        ck = import_currikit(tmp)
        work = Path(tmp)

        r = ck.SplitMix64(1234567)
        ref = Ref(1234567)
        check([r.next_u64() for _ in range(5)] == [ref.next_u64() for _ in range(5)], "SplitMix64 matches reference")
        check(ck.derive_seed(17, "schedule", [1, 0]) == Ref.stream(17, "schedule", [1, 0]).state, "derive_seed")

        ref = Ref.stream(17, "schedule", [2, 3])
        perm = list(range(1000))
        ref.shuffle(perm)
        check(ck.epoch_permutation(17, 2, 3, 1000) == perm, "epoch permutation replays in pure Python")

        lines = ["the cat sat on the mat", "the dog sat", "a cat and a dog"] * 20
        tok = ck.Tokenizer.train(lines, 275)
        check(tok.vocab_size == 275, "tokenizer vocab size")
        check(all(tok.decode(tok.encode(l)) == l for l in lines + ["naïve ünïcode"]), "decode(encode(x)) == x")

        inputs, labels = ck.mask(list(range(10, 138)), key=7, step=0, seed=17, vocab_size=300)
        masked = [i for i, l in enumerate(labels) if l != ck.IGNORE_LABEL]
        check(masked and all(inputs[i] == 4 for i in masked), "masked positions carry the mask id")
        _, labels2 = ck.mask(list(range(10, 138)), key=7, step=1, seed=17, vocab_size=300)
        check(labels != labels2, "masking is redrawn per step")

        data = work / "data"
        out = work / "out"
        check(ck.run_cli(["synth", "--out", str(data), "--lines", "3000"]) == 0, "synth")
        rc = ck.run_cli(
            ["pipeline", "--config", str(data / "registry.toml"), "--out", str(out),
             "--steps", "2000", "--toy-steps", "20", "--vocab-size", "600"]
        )
        check(rc == 0, "pipeline")

        reg = ck.Registry.load(out / "registry")
        check(len(reg) == 3000 and len(reg.corpora) == 10, "registry loads")
        exp = reg.exposure(out / "plans" / "random.json", 128, 17)
        total = sum(c["expected_input_fraction"] for c in exp["corpora"])
        check(abs(total - 1.0) < 1e-12, "exposure fractions sum to one")

        manifest = out / "shards" / "stage-1" / "manifest.json"
        records = ck.read_shards(manifest)
        check(ck.verify_shards(manifest) == len(records) > 0, "shards verify")
        masked_records = ck.read_shards(out / "shards" / "masked" / "manifest.json")
        check(isinstance(masked_records[0], tuple), "masked payload decodes to pairs")

        shard = out / "shards" / "stage-1" / "shard-00000.bin"
        blob = bytearray(shard.read_bytes())
        blob[-1] ^= 0x01
        shard.write_bytes(bytes(blob))
        try:
            ck.verify_shards(manifest)
            check(False, "corruption detected")
        except ck.CurrikitError as e:
            check(isinstance(e, (ck.IntegrityError, ck.FormatError)), "corruption detected")

        layers = ck.grow_checkpoint(out / "toy" / "stage-4.ckpt", work / "grown.ckpt", 4)
        check(layers == 8, "grow reaches 8 layers")

    if check.failed:
        sys.exit(1)


if __name__ == "__main__":
    main()
