"""LEARNING controller: a 4-4-2-1 sigmoid perceptron decoded from a bit genome.

Each of the 33 network parameters is stored as a signed Q24.8 fixed-point
word (32 bits, two's complement, resolution 1/256). Words are laid out as
W1 row-major, b1, W2 row-major, b2, W3, b3, and each word is written
most-significant bit first, giving a 1056-bit genome.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

WORD_BITS = 32
FRAC_BITS = 8
SCALE = 1 << FRAC_BITS
# (outputs, inputs) per layer
LAYERS = ((4, 4), (2, 4), (1, 2))
N_PARAMS = sum(o * i + o for o, i in LAYERS)
GENOME_BITS = N_PARAMS * WORD_BITS
GENOME_BYTES = GENOME_BITS // 8
V_OUT_MAX = 5.0

assert N_PARAMS == 33 and GENOME_BITS == 1056, "architecture must consume exactly 33 words"

_INT32_MIN = -(1 << 31)
_INT32_MAX = (1 << 31) - 1


def fixed_to_real(word: int) -> float:
    """Interpret a 32-bit pattern as a signed Q24.8 number."""
    word &= 0xFFFFFFFF
    if word & 0x80000000:
        word -= 1 << 32
    return word / SCALE


def real_to_fixed(x: float) -> int:
    """Encode ``x`` as a Q24.8 bit pattern, rounding half away from zero and saturating."""
    scaled = abs(x) * SCALE
    n = int(np.floor(scaled + 0.5)) if np.isfinite(scaled) else _INT32_MAX + 1
    n = -n if x < 0 else n
    n = min(max(n, _INT32_MIN), _INT32_MAX)
    return n & 0xFFFFFFFF


def words_to_reals(words: np.ndarray) -> np.ndarray:
    return np.asarray(words, dtype=np.uint32).view(np.int32).astype(np.float64) / SCALE


def reals_to_words(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    n = np.sign(v) * np.floor(np.abs(v) * SCALE + 0.5)
    n = np.clip(n, _INT32_MIN, _INT32_MAX).astype(np.int64)
    return n.astype(np.int32).view(np.uint32)


def bits_to_words(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape != (GENOME_BITS,):
        raise ValueError(f"genome must have exactly {GENOME_BITS} bits, got shape {bits.shape}")
    return np.packbits(bits).view(">u4").astype(np.uint32)


def words_to_bits(words: np.ndarray) -> np.ndarray:
    w = np.asarray(words, dtype=np.uint32)
    if w.shape != (N_PARAMS,):
        raise ValueError(f"expected {N_PARAMS} words, got shape {w.shape}")
    return np.unpackbits(w.astype(">u4").view(np.uint8))


@dataclass(frozen=True)
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    @classmethod
    def from_vector(cls, vec) -> "MlpParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got shape {vec.shape}")
        parts = []
        pos = 0
        for n_out, n_in in LAYERS:
            parts.append(vec[pos:pos + n_out * n_in].reshape(n_out, n_in).copy())
            pos += n_out * n_in
            parts.append(vec[pos:pos + n_out].copy())
            pos += n_out
        assert pos == N_PARAMS
        return cls(*parts)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.W1.ravel(), self.b1, self.W2.ravel(), self.b2, self.W3.ravel(), self.b3,
        ]).astype(np.float64)

    def arrays(self):
        return self.W1, self.b1, self.W2, self.b2, self.W3, self.b3


def decode_genome(bits: np.ndarray) -> MlpParams:
    return MlpParams.from_vector(words_to_reals(bits_to_words(bits)))


def encode_params(params: MlpParams) -> np.ndarray:
    return words_to_bits(reals_to_words(params.to_vector()))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def forward(params: MlpParams, x) -> float:
    """Network activation in (0, 1) for raw state ``x = (p, v, theta, omega)``.

    For very large weights the float result can round to exactly 0.0 or 1.0.
    """
    h = np.asarray(x, dtype=np.float64)
    for W, b in ((params.W1, params.b1), (params.W2, params.b2), (params.W3, params.b3)):
        h = _sigmoid(W @ h + b)
    return float(h[0])


def output_to_voltage(a: float) -> float:
    return V_OUT_MAX * a


def save_genome(path, bits: np.ndarray, header: str | None = None) -> Path:
    """Write a genome; ``.bin`` gives 132 raw big-endian bytes, anything else hex text."""
    path = Path(path)
    words = bits_to_words(bits)
    if path.suffix == ".bin":
        path.write_bytes(words.astype(">u4").tobytes())
    else:
        lines = [f"# {line}" for line in (header or "").splitlines()]
        lines.append(words.astype(">u4").tobytes().hex())
        path.write_text("\n".join(lines) + "\n")
    return path


def load_genome(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".bin":
        raw = path.read_bytes()
        if len(raw) != GENOME_BYTES:
            raise ValueError(f"{path}: expected {GENOME_BYTES} bytes, got {len(raw)}")
    else:
        text = "".join(
            line.strip() for line in path.read_text().splitlines()
            if line.strip() and not line.lstrip().startswith("#")
        )
        if len(text) != 2 * GENOME_BYTES:
            raise ValueError(f"{path}: expected {2 * GENOME_BYTES} hex characters, got {len(text)}")
        raw = bytes.fromhex(text)
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
