"""
Factor-structured synthetic data standing in for the four face datasets.

Every sample is a vector built from a spoof direction (present for genuine
samples, scaled per domain), an identity template, an environment offset,
a sensor signature, and Gaussian noise drawn from its own derived stream.

The input space is split by one seeded orthonormal basis into a spoof axis,
a capture-condition subspace shared by every domain, and a nuisance
subspace. Identity templates live in the nuisance subspace. Environment and
sensor signatures add a component along their domain's capture direction:
+ for the classes attack sessions were recorded under, - for the bona fide
ones. Each domain's capture direction is one vertex of a regular simplex, so
the capture bias of any three domains points against the fourth.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from dasnlab.errors.exceptions import ConfigurationError, DataError, RangeError
from dasnlab.services.losses import Batch
from dasnlab.services.model import DOMAIN_FACTOR, GENUINE, SIF_FACTORS, SPOOF
from dasnlab.services.rng import Xoshiro256StarStar

# identity / environment / sensor classes of each training set
DOMAIN_FACTOR_COUNTS: Dict[str, Tuple[int, int, int]] = {
    "M": (15, 1, 2),
    "C": (20, 1, 3),
    "I": (15, 2, 1),
    "O": (20, 3, 6),
}
SUITE_DOMAINS = tuple(DOMAIN_FACTOR_COUNTS)
CAPTURE_FACTORS = ("environment", "sensor")


@dataclass
class FactorCoefficients:
    """Mixing coefficients shared by every domain."""

    spoof_strength: float = 2.0
    spoof_scale_range: Tuple[float, float] = (0.6, 1.4)
    spoof_tilt: float = 1.0
    identity_weight: float = 1.5
    environment_weight: float = 1.0
    sensor_weight: float = 1.0
    noise_sigma: float = 0.5
    capture_bias: float = 0.8
    condition_share: float = 0.8

    def validate(self) -> None:
        """
        Raises:
            ConfigurationError: If a coefficient is outside its range.
        """
        low, high = self.spoof_scale_range
        if not 0 < low <= high:
            raise ConfigurationError(f"Invalid spoof_scale_range {self.spoof_scale_range}")
        if not 0.5 <= self.capture_bias <= 1.0:
            raise ConfigurationError(f"capture_bias must lie in [0.5, 1], got {self.capture_bias}")
        if not 0.0 <= self.condition_share <= 1.0:
            raise ConfigurationError(
                f"condition_share must lie in [0, 1], got {self.condition_share}"
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "spoof_strength": self.spoof_strength,
            "spoof_scale_range": list(self.spoof_scale_range),
            "spoof_tilt": self.spoof_tilt,
            "identity_weight": self.identity_weight,
            "environment_weight": self.environment_weight,
            "sensor_weight": self.sensor_weight,
            "noise_sigma": self.noise_sigma,
            "capture_bias": self.capture_bias,
            "condition_share": self.condition_share,
        }


@dataclass
class DomainDictionary:
    """Dictionaries of one domain; rows are unit vectors when generated."""

    name: str
    spoof_direction: np.ndarray
    spoof_scale: float
    identity: np.ndarray
    environment: np.ndarray
    sensor: np.ndarray
    capture_direction: Optional[np.ndarray] = None

    @property
    def counts(self) -> Dict[str, int]:
        return {
            "identity": self.identity.shape[0],
            "environment": self.environment.shape[0],
            "sensor": self.sensor.shape[0],
        }


@dataclass
class FactorModel:
    """Generative model of the whole suite."""

    seed: int
    input_dim: int
    domains: Dict[str, DomainDictionary]
    coefficients: FactorCoefficients = field(default_factory=FactorCoefficients)
    spoof_base: Optional[np.ndarray] = None

    def domain(self, name: str) -> DomainDictionary:
        try:
            return self.domains[name]
        except KeyError:
            raise ConfigurationError(f"Unknown domain '{name}'") from None

    def manifest(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "input_dim": self.input_dim,
            "coefficients": self.coefficients.to_dict(),
            "domains": {
                name: {"counts": d.counts, "spoof_scale": d.spoof_scale}
                for name, d in self.domains.items()
            },
        }


@dataclass(frozen=True)
class Sample:
    """One observation with its spoof label and domain-local SiF labels."""

    x: np.ndarray
    y: int
    f_identity: int
    f_environment: int
    f_sensor: int
    domain: str

    def factor(self, k: str) -> int:
        return getattr(self, f"f_{k}")


class FactorDataset:
    """
    Samples from one or more domains with offset-union SiF label spaces.

    Samples keep their domain-local labels; `factor_labels` maps them into
    0..N^k-1 by adding the per-domain offset of the union.
    """

    def __init__(
        self,
        samples: Sequence[Sample],
        domain_counts: Dict[str, Dict[str, int]],
    ):
        self.samples = list(samples)
        self.domains = tuple(domain_counts)
        self.domain_counts = {d: dict(c) for d, c in domain_counts.items()}
        self.offsets: Dict[str, Dict[str, int]] = {}
        running = {k: 0 for k in SIF_FACTORS}
        for d in self.domains:
            self.offsets[d] = dict(running)
            for k in SIF_FACTORS:
                running[k] += self.domain_counts[d][k]
        self.class_counts = dict(running)
        self.class_counts[DOMAIN_FACTOR] = len(self.domains)
        for s in self.samples:
            if s.domain not in self.domain_counts:
                raise DataError(f"Sample from domain '{s.domain}' outside roster {self.domains}")

        if self.samples:
            self.x = np.stack([s.x for s in self.samples]).astype(np.float64)
        else:
            self.x = np.zeros((0, 0))
        self.y = np.array([s.y for s in self.samples], dtype=np.int64)
        self._labels = {
            k: np.array(
                [self.offsets[s.domain][k] + s.factor(k) for s in self.samples], dtype=np.int64
            )
            for k in SIF_FACTORS
        }
        self._labels[DOMAIN_FACTOR] = np.array(
            [self.domains.index(s.domain) for s in self.samples], dtype=np.int64
        )

    def __len__(self):
        return len(self.samples)

    @property
    def input_dim(self) -> int:
        return int(self.x.shape[1]) if len(self) else 0

    def factor_labels(self, k: str) -> np.ndarray:
        try:
            return self._labels[k]
        except KeyError:
            raise DataError(f"Dataset has no labels for factor '{k}'") from None

    def batch(self, indices: Optional[np.ndarray] = None, factors: Iterable[str] = ()) -> Batch:
        idx = np.arange(len(self)) if indices is None else np.asarray(indices, dtype=np.int64)
        return Batch(
            x=self.x[idx],
            y=self.y[idx],
            factor_labels={k: self.factor_labels(k)[idx] for k in factors},
        )


@dataclass
class BenchmarkSuite:
    """The four single-domain training sets and the model that generated them."""

    datasets: Dict[str, FactorDataset]
    factor_model: Optional[FactorModel] = None

    def domain(self, name: str) -> FactorDataset:
        try:
            return self.datasets[name]
        except KeyError:
            raise ConfigurationError(
                f"Unknown domain '{name}'; suite has {tuple(self.datasets)}"
            ) from None



def _norm(v: np.ndarray) -> float:
    return float(np.sqrt(np.sum(v * v)))


def _orthonormal_basis(rng: Xoshiro256StarStar, dim: int) -> np.ndarray:
    """Rows form an orthonormal basis of the input space (Gram-Schmidt, two passes)."""
    basis: List[np.ndarray] = []
    while len(basis) < dim:
        v = rng.normal(dim)
        for _ in range(2):
            for u in basis:
                v = v - np.sum(v * u) * u
        norm = _norm(v)
        if norm > 1e-6:
            basis.append(v / norm)
    return np.stack(basis)


def _simplex_vertices(n: int) -> np.ndarray:
    """n unit vectors in n-1 dimensions with pairwise inner product -1/(n-1)."""
    if n < 2:
        return np.zeros((n, 0))
    helmert = np.zeros((n - 1, n))
    for k in range(1, n):
        helmert[k - 1, :k] = 1.0
        helmert[k - 1, k] = -float(k)
        helmert[k - 1] /= np.sqrt(k * (k + 1))
    return helmert.T / np.sqrt(1.0 - 1.0 / n)


def _combine(coefficients: np.ndarray, span: np.ndarray) -> np.ndarray:
    """Rows of `coefficients` expressed in the basis rows of `span`."""
    return (coefficients[:, :, None] * span[None, :, :]).sum(axis=1)


def _unit_rows(rng: Xoshiro256StarStar, rows: int, span: np.ndarray) -> np.ndarray:
    """Random unit vectors inside the subspace spanned by the rows of `span`."""
    out = np.empty((rows, span.shape[1]))
    for r in range(rows):
        v = _combine(rng.normal(span.shape[0])[None, :], span)[0]
        out[r] = v / _norm(v)
    return out


def capture_sides(n_classes: int) -> np.ndarray:
    """
    +1 for the classes attack sessions favour, -1 for the bona fide ones.

    The first half of the classes (rounded up) is the attack side; a factor
    with a single class has no side.
    """
    if n_classes < 2:
        return np.zeros(n_classes)
    sides = -np.ones(n_classes)
    sides[: (n_classes + 1) // 2] = 1.0
    return sides


def _signatures(
    rng: Xoshiro256StarStar,
    n_classes: int,
    capture_direction: np.ndarray,
    share: float,
    nuisance: np.ndarray,
) -> np.ndarray:
    """Environment or sensor signatures of one domain."""
    rows = _unit_rows(rng, n_classes, nuisance)
    sides = capture_sides(n_classes)
    if not np.any(capture_direction) or share == 0.0:
        return rows
    mixed = share * sides[:, None] * capture_direction[None, :] + np.sqrt(1.0 - share**2) * rows
    mixed = np.where(sides[:, None] == 0, rows, mixed)
    return mixed / np.sqrt(np.sum(mixed * mixed, axis=1, keepdims=True))


def build_factor_model(
    seed: int,
    input_dim: int = 24,
    coefficients: Optional[FactorCoefficients] = None,
    domain_counts: Optional[Dict[str, Tuple[int, int, int]]] = None,
) -> FactorModel:
    """
    Draw every domain dictionary from streams derived from the seed.

    Raises:
        ConfigurationError: If a coefficient is out of range, a domain has an
            empty factor, or input_dim cannot hold the spoof axis, one
            capture-condition axis per extra domain and a nuisance axis.
    """
    coefficients = coefficients or FactorCoefficients()
    coefficients.validate()
    domain_counts = domain_counts or DOMAIN_FACTOR_COUNTS
    n_domains = len(domain_counts)
    if input_dim < n_domains + 1:
        raise ConfigurationError(
            f"input_dim {input_dim} is too small for {n_domains} domains; need {n_domains + 1}"
        )
    low, high = coefficients.spoof_scale_range

    basis = _orthonormal_basis(Xoshiro256StarStar.from_keys(seed, "basis"), input_dim)
    spoof_base = basis[0]
    nuisance = basis[n_domains:]
    capture = _combine(_simplex_vertices(n_domains), basis[1:n_domains])

    domains = {}
    for index, (name, (n_id, n_env, n_sens)) in enumerate(domain_counts.items()):
        if min(n_id, n_env, n_sens) < 1:
            raise ConfigurationError(f"Domain {name} needs at least one class per factor")
        rng = Xoshiro256StarStar.from_keys(seed, "dictionary", name)
        tilted = spoof_base + coefficients.spoof_tilt * _unit_rows(rng, 1, nuisance)[0]
        share = coefficients.condition_share
        domains[name] = DomainDictionary(
            name=name,
            spoof_direction=tilted / _norm(tilted),
            spoof_scale=low + (high - low) * rng.random(),
            identity=_unit_rows(rng, n_id, nuisance),
            environment=_signatures(rng, n_env, capture[index], share, nuisance),
            sensor=_signatures(rng, n_sens, capture[index], share, nuisance),
            capture_direction=capture[index],
        )
    return FactorModel(seed, input_dim, domains, coefficients, spoof_base)


def gen_sample(
    factor_model: FactorModel,
    domain: str,
    y: int,
    f_id: int,
    f_env: int,
    f_sens: int,
    sample_seed: int,
) -> Sample:
    """
    Generate one observation.

    Raises:
        RangeError: If y or a factor index is invalid for the domain.
    """
    d = factor_model.domain(domain)
    c = factor_model.coefficients
    if y not in (0, 1):
        raise RangeError(f"Spoof label must be 0 or 1, got {y}")
    for k, value in (("identity", f_id), ("environment", f_env), ("sensor", f_sens)):
        if not 0 <= value < d.counts[k]:
            raise RangeError(
                f"{k} index {value} outside 0..{d.counts[k] - 1} for domain {domain}"
            )

    rng = Xoshiro256StarStar.from_keys(factor_model.seed, "sample", domain, sample_seed)
    nuisance = (
        c.identity_weight * d.identity[f_id]
        + c.environment_weight * d.environment[f_env]
        + c.sensor_weight * d.sensor[f_sens]
        + c.noise_sigma * rng.normal(factor_model.input_dim)
    )
    spoof = (c.spoof_strength * d.spoof_scale * y) * d.spoof_direction
    return Sample(
        x=spoof + nuisance,
        y=int(y),
        f_identity=int(f_id),
        f_environment=int(f_env),
        f_sensor=int(f_sens),
        domain=domain,
    )


def capture_schedule(n: int, bias: float) -> np.ndarray:
    """
    Mask of the n samples recorded on their label's favoured side.

    round(n * (1 - bias)) samples are not favoured, spread evenly.
    """
    favoured = np.ones(n, dtype=bool)
    k = int(round(n * (1.0 - bias)))
    if k:
        favoured[((np.arange(k) + 0.5) * n / k).astype(np.int64)] = False
    return favoured


def assign_captures(labels: np.ndarray, n_classes: int, bias: float) -> np.ndarray:
    """
    Capture class of every sample for one environment or sensor factor.

    Spoof samples favour the attack side and genuine samples the bona fide
    side; within a side the classes are used in turn.
    """
    labels = np.asarray(labels)
    out = np.zeros(labels.size, dtype=np.int64)
    if n_classes < 2:
        return out
    sides = capture_sides(n_classes)
    classes = {1.0: np.flatnonzero(sides > 0), -1.0: np.flatnonzero(sides < 0)}
    for y, home in ((SPOOF, 1.0), (GENUINE, -1.0)):
        members = np.flatnonzero(labels == y)
        favoured = capture_schedule(members.size, bias)
        used = {1.0: 0, -1.0: 0}
        for position, index in enumerate(members):
            side = home if favoured[position] else -home
            out[index] = classes[side][used[side] % classes[side].size]
            used[side] += 1
    return out


def generate_domain(
    factor_model: FactorModel, domain: str, samples_per_identity: int = 24
) -> FactorDataset:
    """
    Balanced samples for one domain.

    Every identity contributes samples_per_identity samples alternating
    spoof and genuine. Environment and sensor classes follow the domain's
    capture bias (see `assign_captures`).
    """
    if samples_per_identity < 2 or samples_per_identity % 2:
        raise ConfigurationError("samples_per_identity must be an even number >= 2")
    d = factor_model.domain(domain)
    counts = d.counts
    bias = factor_model.coefficients.capture_bias
    identities = np.repeat(np.arange(counts["identity"]), samples_per_identity)
    labels = np.tile(np.arange(samples_per_identity) % 2, counts["identity"])
    environments = assign_captures(labels, counts["environment"], bias)
    sensors = assign_captures(labels, counts["sensor"], bias)
    samples = [
        gen_sample(
            factor_model,
            domain,
            y=int(labels[t]),
            f_id=int(identities[t]),
            f_env=int(environments[t]),
            f_sens=int(sensors[t]),
            sample_seed=t,
        )
        for t in range(labels.size)
    ]
    return FactorDataset(samples, {domain: counts})


def gen_benchmark_suite(
    global_seed: int,
    input_dim: int = 24,
    coefficients: Optional[FactorCoefficients] = None,
    samples_per_identity: int = 24,
) -> BenchmarkSuite:
    """Four domains with the identity/environment/sensor counts of the real training sets."""
    factor_model = build_factor_model(global_seed, input_dim, coefficients)
    datasets = {
        name: generate_domain(factor_model, name, samples_per_identity)
        for name in SUITE_DOMAINS
    }
    return BenchmarkSuite(datasets, factor_model)


def merge_domains(parts: Sequence[FactorDataset]) -> FactorDataset:
    """Offset-union of datasets; domain order fixes the label offsets."""
    samples: List[Sample] = []
    counts: Dict[str, Dict[str, int]] = {}
    for part in parts:
        for d in part.domains:
            if d in counts:
                raise DataError(f"Domain {d} appears twice in a merge")
            counts[d] = part.domain_counts[d]
        samples.extend(part.samples)
    return FactorDataset(samples, counts)


def parse_task(task: str) -> Tuple[Tuple[str, ...], str]:
    """
    Split a task name such as "OCI_to_M" into (sources, target).
    """
    try:
        sources, target = task.split("_to_")
    except ValueError:
        raise ConfigurationError(f"Task '{task}' is not of the form <sources>_to_<target>") from None
    if not sources or len(target) != 1 or target in sources or len(set(sources)) != len(sources):
        raise ConfigurationError(f"Invalid task '{task}'")
    return tuple(sources), target


def cross_domain_split(
    suite: BenchmarkSuite, sources: Sequence[str], target: str
) -> Tuple[FactorDataset, FactorDataset]:
    """Train on the source domains, test on the target domain."""
    if target in sources:
        raise ConfigurationError(f"Target domain {target} is also a source")
    train = merge_domains([suite.domain(d) for d in sources])
    test = suite.domain(target)
    return train, test


def leave_one_domain_out(
    suite: BenchmarkSuite, held_out: str
) -> Tuple[FactorDataset, FactorDataset]:
    """Train on every other domain of the suite, test on the held-out one."""
    suite.domain(held_out)
    sources = [d for d in suite.datasets if d != held_out]
    return cross_domain_split(suite, sources, held_out)
