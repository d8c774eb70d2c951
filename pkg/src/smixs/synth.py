"""Synthetic longitudinal datasets with Perlin-noise cluster means."""
from dataclasses import asdict, dataclass

import numpy as np

from .errors import BadLevel
from .model import Dataset

#: Noise standard deviation per level, as a fraction of ``mean_scale``.
NOISE_FRACTIONS = {1: 0.05, 2: 0.15, 3: 0.30, 4: 0.50}

#: Max |second difference| of a curve from :func:`perlin_curve` with default
#: shape settings, per unit ``mean_scale`` and per unit squared sample step
#: (in lattice units).  Largest value seen over 10 000 seeds at p up to 1000
#: was 151; frozen with headroom.
SMOOTHNESS_BOUND = 200.0


@dataclass(frozen=True)
class GeneratorSpec:
    c: int
    n: int
    p: int
    noise_level: int = 1
    seed: int = 0
    mean_scale: float = 10.0
    octaves: int = 2
    frequency: float = 3.0
    persistence: float = 0.5
    noise_sigma_override: float = None

    def __post_init__(self):
        if self.noise_level not in NOISE_FRACTIONS:
            raise BadLevel(f"noise level must be one of 1..4, got {self.noise_level!r}")
        if self.c < 1 or self.n < self.c or self.p < 3:
            raise ValueError(f"need c >= 1, n >= c and p >= 3 (got c={self.c}, n={self.n}, p={self.p})")
        if self.octaves < 1 or self.frequency <= 0:
            raise ValueError("octaves must be >= 1 and frequency > 0")

    def to_dict(self):
        return asdict(self)


def fade(u):
    """Smoothstep ``3u^2 - 2u^3``; C1 at the lattice points."""
    return u * u * (3.0 - 2.0 * u)


def gradient_noise(x, gradients):
    """Classic 1-D Perlin noise on the integer lattice.

    ``gradients[i]`` is the slope at lattice point ``i``; the value at every
    lattice point is zero.
    """
    x = np.asarray(x, dtype=float)
    i0 = np.floor(x).astype(int)
    u = x - i0
    g0 = gradients[i0]
    g1 = gradients[i0 + 1]
    return (1.0 - fade(u)) * (g0 * u) + fade(u) * (g1 * (u - 1.0))


def _octave_sum(x, rng, octaves, persistence):
    total = np.zeros_like(x)
    for o in range(octaves):
        f = 2.0 ** o
        xo = x * f
        grads = rng.uniform(-1.0, 1.0, size=int(np.floor(xo.max())) + 2)
        total += persistence ** o * gradient_noise(xo, grads)
    return total


def perlin_curve(seed, p, spec):
    """``p`` samples of an octave-summed Perlin curve scaled to peak ``mean_scale``."""
    rng = np.random.default_rng(seed)
    offset = rng.uniform(0.0, 1.0)
    x = offset + np.linspace(0.0, spec.frequency, p)
    v = _octave_sum(x, rng, spec.octaves, spec.persistence)
    peak = np.abs(v).max()
    if peak == 0:
        return v
    return spec.mean_scale * v / peak


def smoothness_bound(spec, p):
    step = spec.frequency / (p - 1)
    return SMOOTHNESS_BOUND * spec.mean_scale * step * step


def noise_sigma(level, mean_scale=1.0):
    if level not in NOISE_FRACTIONS:
        raise BadLevel(f"noise level must be one of 1..4, got {level!r}")
    return mean_scale * NOISE_FRACTIONS[level]


@dataclass(frozen=True)
class SyntheticData:
    dataset: Dataset
    true_means: np.ndarray
    spec: GeneratorSpec
    sigma: float


def default_times(p):
    """Unit-spaced measurement times ``0, 1, ..., p-1``."""
    return np.arange(p, dtype=float)


def generate_dataset(spec):
    """Cluster means from independent Perlin curves plus white noise.

    Subjects are assigned to clusters round-robin, so cluster sizes differ
    by at most one.
    """
    root = np.random.SeedSequence(spec.seed)
    children = root.spawn(spec.c + 1)
    curve_seeds = [int(ch.generate_state(1)[0]) for ch in children[: spec.c]]
    means = np.array([perlin_curve(s, spec.p, spec) for s in curve_seeds])
    labels = np.arange(spec.n) % spec.c
    if spec.noise_sigma_override is not None:
        sigma = float(spec.noise_sigma_override)
    else:
        sigma = noise_sigma(spec.noise_level, spec.mean_scale)
    rng = np.random.default_rng(children[spec.c])
    y = means[labels] + sigma * rng.standard_normal((spec.n, spec.p))
    ds = Dataset(y=y, t=default_times(spec.p), labels=labels,
                 ids=tuple(f"s{i}" for i in range(spec.n)))
    return SyntheticData(dataset=ds, true_means=means, spec=spec, sigma=sigma)
