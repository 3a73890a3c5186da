"""Linear Gaussian teacher, streaming samples and the quantized predictor."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DimError, InvalidRange
from .quantizer import IDENTITY, Quantizer, QuantizerMoments, quantize

# Counter-based RNG streams derived from one master seed.
STREAMS = {"teacher": 0, "data": 1, "init": 2, "noise": 3}


def rng_for(master_seed: int, stream: str, run: int = 0) -> np.random.Generator:
    """Philox generator for ``(master_seed, run, stream)``.

    Streams never overlap and do not depend on the order in which runs execute.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(run), STREAMS[stream]))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class TeacherDist:
    kind: str = "all_ones"  # all_ones | gaussian | rademacher
    mean: float = 0.0
    var: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("all_ones", "gaussian", "rademacher"):
            raise ValueError(f"unknown teacher distribution {self.kind!r}")


@dataclass(frozen=True)
class TeacherSpec:
    dim: int
    rho: float = 1.0
    teacher_dist: TeacherDist = field(default_factory=TeacherDist)
    noise_var: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise DimError("dim must be >= 1")
        if not self.rho > 0:
            raise InvalidRange("rho must be positive")
        if self.noise_var < 0:
            raise InvalidRange("noise_var must be non-negative")


@dataclass(frozen=True)
class ModelConfig:
    weight_quantizer: Quantizer = IDENTITY
    input_quantizer: Quantizer = IDENTITY
    ridge: float = 0.0
    learning_rate: float = 0.1

    def __post_init__(self):
        if self.ridge < 0:
            raise InvalidRange("ridge must be non-negative")
        if not self.learning_rate > 0:
            raise InvalidRange("learning_rate must be positive")

    @property
    def input_moments(self) -> QuantizerMoments:
        return self.input_quantizer.moments()


@dataclass(frozen=True)
class Sample:
    input: np.ndarray
    label: float


def sample_teacher(spec: TeacherSpec, seed: int) -> np.ndarray:
    """Draw w* and rescale it so that ||w*||^2 = rho * d holds exactly."""
    d = spec.dim
    dist = spec.teacher_dist
    rng = rng_for(seed, "teacher")
    if dist.kind == "all_ones":
        w = np.ones(d)
    elif dist.kind == "gaussian":
        w = dist.mean + math.sqrt(dist.var) * rng.standard_normal(d)
    else:
        w = dist.scale * rng.choice([-1.0, 1.0], size=d)
    norm_sq = float(w @ w)
    if norm_sq == 0.0:
        w = np.ones(d)
        norm_sq = float(d)
    return w * math.sqrt(spec.rho * d / norm_sq)


class SampleStream:
    """Fresh i.i.d. pairs (x, y) with x ~ N(0, I_d) and y = x.w*/sqrt(d) + noise."""

    def __init__(self, teacher: np.ndarray, noise_var: float, seed: int, run: int = 0):
        self.teacher = np.asarray(teacher, dtype=float)
        self.dim = self.teacher.size
        self.noise_std = math.sqrt(noise_var)
        self._data = rng_for(seed, "data", run)
        self._noise = rng_for(seed, "noise", run)

    def next_sample(self) -> Sample:
        x = self._data.standard_normal(self.dim)
        xi = self.noise_std * self._noise.standard_normal() if self.noise_std else 0.0
        return Sample(x, float(x @ self.teacher) / math.sqrt(self.dim) + xi)

    def batch(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """``n`` samples at once: inputs of shape (n, d) and labels of shape (n,)."""
        x = self._data.standard_normal((n, self.dim))
        y = x @ self.teacher / math.sqrt(self.dim)
        if self.noise_std:
            y = y + self.noise_std * self._noise.standard_normal(n)
        return x, y

    def __iter__(self) -> Iterator[Sample]:
        while True:
            yield self.next_sample()


def next_sample(stream: SampleStream) -> Sample:
    return stream.next_sample()


def predict(config: ModelConfig, w, x) -> float:
    """(1/sqrt(d)) psi(w) . psi(x) with each role's own quantizer."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    if w.shape[-1] != x.shape[-1]:
        raise DimError(f"weight dim {w.shape[-1]} != input dim {x.shape[-1]}")
    d = w.shape[-1]
    out = quantize(config.input_quantizer, x) @ quantize(config.weight_quantizer, w) / math.sqrt(d)
    return out if np.ndim(out) else float(out)


def generalization_error(moments_x: QuantizerMoments, m_psi: float, q_psi: float, rho: float, noise_var: float) -> float:
    return moments_x.sigma_sq * q_psi - 2.0 * moments_x.kappa * m_psi + rho + noise_var



def local_fields(config: ModelConfig, w, teacher, x) -> np.ndarray:
    """(A, B, C, D) = (w*.x, w*.psi(x), w.psi(x), psi(w).psi(x)) / sqrt(d), one row per input."""
    w = np.asarray(w, dtype=float)
    teacher = np.asarray(teacher, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not (w.shape == teacher.shape == x.shape[-1:]):
        raise DimError("w, teacher and inputs must share the dimension")
    sq = math.sqrt(w.size)
    px = quantize(config.input_quantizer, x)
    pw = quantize(config.weight_quantizer, w)
    return np.column_stack([x @ teacher, px @ teacher, px @ w, px @ pw]) / sq


def local_field_covariance(config: ModelConfig, w, teacher) -> np.ndarray:
    """Exact covariance of the local fields at finite d, given w and w*."""
    w = np.asarray(w, dtype=float)
    teacher = np.asarray(teacher, dtype=float)
    d = w.size
    pw = quantize(config.weight_quantizer, w)
    rho, m, q = teacher @ teacher / d, teacher @ w / d, w @ w / d
    m_psi, r_psi, q_psi = pw @ teacher / d, pw @ w / d, pw @ pw / d
    mom = config.input_moments
    k, s2 = mom.kappa, mom.sigma_sq
    return np.array([
        [rho, k * rho, k * m, k * m_psi],
        [k * rho, s2 * rho, s2 * m, s2 * m_psi],
        [k * m, s2 * m, s2 * q, s2 * r_psi],
        [k * m_psi, s2 * m_psi, s2 * r_psi, s2 * q_psi],
    ])

# Record/replay of sample streams, for debugging only.
# Header: b"STEL", u32 version, u64 d, u64 seed; then records of d f64 + 1 f64, little-endian.

_MAGIC = b"STEL"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def write_samples(path: str | Path, stream: SampleStream, n: int, seed: int) -> None:
    x, y = stream.batch(n)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, stream.dim, int(seed)))
        recs = np.empty((n, stream.dim + 1), dtype="<f8")
        recs[:, :-1] = x
        recs[:, -1] = y
        fh.write(recs.tobytes())


def read_samples(path: str | Path) -> tuple[int, int, np.ndarray, np.ndarray]:
    """Returns (d, seed, inputs, labels)."""
    with open(path, "rb") as fh:
        magic, version, d, seed = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC or version != _VERSION:
            raise ValueError(f"not a v{_VERSION} sample file: {path}")
        raw = np.frombuffer(fh.read(), dtype="<f8")
    if raw.size % (d + 1):
        raise ValueError("truncated sample file")
    recs = raw.reshape(-1, d + 1)
    return d, seed, recs[:, :-1].copy(), recs[:, -1].copy()


class ReplayStream:
    """Drop-in replacement for SampleStream that reads a recorded file."""

    def __init__(self, path: str | Path):
        self.dim, self.seed, self._x, self._y = read_samples(path)
        self._pos = 0

    def next_sample(self) -> Sample:
        if self._pos >= len(self._y):
            raise StopIteration("replay file exhausted")
        s = Sample(self._x[self._pos], float(self._y[self._pos]))
        self._pos += 1
        return s

    def batch(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if self._pos + n > len(self._y):
            raise StopIteration("replay file exhausted")
        sl = slice(self._pos, self._pos + n)
        self._pos += n
        return self._x[sl], self._y[sl]
