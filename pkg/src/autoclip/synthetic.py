"""Controlled-setting simulation of class/template/image embeddings.

Class means ``c_j``, template means ``p_i`` and pair couplings ``psi_ij``
are standard-normal d-vectors. The descriptor for template i and class j is
``(1 - e) (c_j + p_i) + e psi_ij`` where ``e`` is the entanglement, and an
image is a descriptor plus Gaussian noise of per-coordinate scale
``instance_noise``. Vectors are emitted raw; classifiers normalize.

Randomness
----------
Every instance set is drawn from numpy's counter-based ``Philox`` bit
generator keyed by a ``SeedSequence``. A grid run keys seed ``s`` of cell
``c`` with ``SeedSequence([base_seed, c, s])``, so each cell and seed owns an
independent stream. Normal variates come from ``Generator.standard_normal``
(numpy's ziggurat transform of the uniform stream) and discrete choices
from ``Generator.integers``. Draw order inside one instance set is fixed:
class means, template means, couplings, labels, template assignments,
noise.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .aggregators import Max, Mean, predict_batch
from .embedding import normalize
from .engine import AutoClip, AutoclipConfig, ObjectiveKind, default_workers
from .exceptions import ConfigError
from .stepsize import check_beta

DEFAULT_ENTANGLEMENT = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_NOISE = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class ControlledConfig:
    num_classes: int = 5
    dim: int = 128
    num_templates: int = 10
    num_instances: int = 200
    entanglement: float = 0.0
    instance_noise: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2 or self.dim < 1 or self.num_templates < 1 or self.num_instances < 1:
            raise ConfigError("controlled setting needs C >= 2 and positive d, K, N")
        if not 0.0 <= self.entanglement <= 1.0:
            raise ConfigError(f"entanglement must lie in [0, 1], got {self.entanglement}")
        if not self.instance_noise >= 0:
            raise ConfigError(f"instance noise must be non-negative, got {self.instance_noise}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class ControlledInstanceSet:
    descriptors: np.ndarray  # K x C x d, raw
    images: np.ndarray  # N x d, raw
    labels: np.ndarray  # N, class indices
    template_assignments: np.ndarray  # N, template indices


def instance_stream(*key: int) -> np.random.Generator:
    """Philox generator keyed by ``SeedSequence(key)``.

    ``instance_stream(seed)`` drives :func:`sample_controlled`;
    ``instance_stream(base_seed, cell_index, s)`` drives seed ``s`` of a grid cell.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def sample_controlled(config: ControlledConfig, rng: np.random.Generator | None = None) -> ControlledInstanceSet:
    if rng is None:
        rng = instance_stream(config.seed)
    C, d, K, N = config.num_classes, config.dim, config.num_templates, config.num_instances
    class_means = rng.standard_normal((C, d))
    template_means = rng.standard_normal((K, d))
    coupling = rng.standard_normal((K, C, d))
    labels = rng.integers(0, C, size=N)
    templates = rng.integers(0, K, size=N)
    noise = rng.standard_normal((N, d)) * config.instance_noise

    e = config.entanglement
    additive = class_means[None, :, :] + template_means[:, None, :]
    if e == 0.0:
        desc = additive
    elif e == 1.0:
        desc = coupling
    else:
        desc = (1.0 - e) * additive + e * coupling
    images = desc[templates, labels] + noise
    return ControlledInstanceSet(desc, images, labels, templates)


def similarities(instances: ControlledInstanceSet) -> np.ndarray:
    """N x K x C cosine similarities of every image with every descriptor."""
    desc = normalize(instances.descriptors)
    imgs = normalize(instances.images)
    return np.einsum("kcd,nd->nkc", desc, imgs)


def accuracy(method, instances: ControlledInstanceSet, S: np.ndarray | None = None) -> float:
    if S is None:
        S = similarities(instances)
    pred = predict_batch(method.aggregate(S).scores)
    return float(np.mean(pred == instances.labels))


@dataclass(frozen=True)
class GridSpec:
    entanglement_values: Sequence[float] = DEFAULT_ENTANGLEMENT
    noise_values: Sequence[float] = DEFAULT_NOISE
    seeds: int = 100
    methods: Sequence = field(default_factory=lambda: (Mean(), Max(), AutoClip()))

    def __post_init__(self):
        if not self.entanglement_values or not self.noise_values or not self.methods:
            raise ConfigError("grid axes and method list must be non-empty")
        if self.seeds < 1:
            raise ConfigError("need at least one seed per cell")
        for e in self.entanglement_values:
            if not 0.0 <= e <= 1.0:
                raise ConfigError(f"entanglement must lie in [0, 1], got {e}")
        for eps in self.noise_values:
            if not eps > 0:
                raise ConfigError(f"instance noise values must be positive, got {eps}")

    def cells(self) -> list:
        return [(e, eps) for e in self.entanglement_values for eps in self.noise_values]


@dataclass
class GridResult:
    """Per-seed accuracies of shape (cells, methods, seeds) plus the axes."""

    cells: list
    method_names: list
    accuracies: np.ndarray

    def mean_accuracy(self) -> np.ndarray:
        return self.accuracies.mean(axis=-1)

    def stderr(self) -> np.ndarray:
        return standard_error(self.accuracies)

    def rows(self) -> list:
        """One dict per (cell, method), ordered cell-major."""
        mean, se = self.mean_accuracy(), self.stderr()
        return [
            {
                "entanglement": e,
                "noise": eps,
                "method": name,
                "mean_accuracy": float(mean[c, m]),
                "stderr": float(se[c, m]),
            }
            for c, (e, eps) in enumerate(self.cells)
            for m, name in enumerate(self.method_names)
        ]

    def lookup(self, entanglement: float, noise: float, method: str) -> float:
        c = self.cells.index((entanglement, noise))
        return float(self.mean_accuracy()[c, self.method_names.index(method)])


def standard_error(acc: np.ndarray) -> np.ndarray:
    n = acc.shape[-1]
    if n < 2:
        return np.zeros(acc.shape[:-1])
    return acc.std(axis=-1, ddof=1) / math.sqrt(n)


def _run_cell(args):
    base, cell_index, entanglement, noise, seeds, methods = args
    config = replace(base, entanglement=entanglement, instance_noise=noise)
    out = np.empty((len(methods), seeds))
    for s in range(seeds):
        instances = sample_controlled(config, instance_stream(base.seed, cell_index, s))
        S = similarities(instances)
        for m, method in enumerate(methods):
            out[m, s] = accuracy(method, instances, S)
    return out


def run_grid(spec: GridSpec, config_base: ControlledConfig = ControlledConfig(), workers: int | None = None) -> GridResult:
    """Accuracy of every method on every (entanglement, noise) cell.

    Cells are independent tasks; the result does not depend on ``workers``.
    """
    cells = spec.cells()
    methods = list(spec.methods)
    tasks = [(config_base, c, e, eps, spec.seeds, methods) for c, (e, eps) in enumerate(cells)]
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(tasks) == 1:
        parts = [_run_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_cell, tasks))
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        names = [f"{n}[{i}]" for i, n in enumerate(names)]
    return GridResult(cells, names, np.stack(parts))


def ablation_methods(kind: str, values: Sequence, base: AutoclipConfig = AutoclipConfig()) -> list:
    if kind == "beta":
        return [AutoClip(replace(base, beta=check_beta(v))) for v in values]
    if kind == "objective":
        return [AutoClip(replace(base, objective=ObjectiveKind(v))) for v in values]
    raise ConfigError(f"unknown ablation kind {kind!r}; expected 'beta' or 'objective'")


def run_ablation(
    kind: str,
    values: Sequence,
    config_base: ControlledConfig = ControlledConfig(),
    spec_cells: GridSpec = GridSpec(),
    autoclip: AutoclipConfig = AutoclipConfig(),
    workers: int | None = None,
    aggregate: bool = False,
) -> list:
    """Sweep one AutoCLIP setting over the cells of ``spec_cells``.

    Returns rows with ``value``, ``mean_accuracy`` and ``stderr``: one per
    (value, cell), or one per value when ``aggregate`` is set, in which case
    each seed's accuracy is first averaged over cells.
    """
    methods = ablation_methods(kind, values, autoclip)
    spec = replace(spec_cells, methods=tuple(methods))
    grid = run_grid(spec, config_base, workers)
    labels = [v.value if isinstance(v, ObjectiveKind) else v for v in values]
    if aggregate:
        per_seed = grid.accuracies.mean(axis=0)  # methods x seeds
        mean, se = per_seed.mean(axis=-1), standard_error(per_seed)
        return [
            {"value": labels[m], "mean_accuracy": float(mean[m]), "stderr": float(se[m])}
            for m in range(len(methods))
        ]
    mean, se = grid.mean_accuracy(), grid.stderr()
    return [
        {
            "value": labels[m],
            "entanglement": e,
            "noise": eps,
            "mean_accuracy": float(mean[c, m]),
            "stderr": float(se[c, m]),
        }
        for m in range(len(methods))
        for c, (e, eps) in enumerate(grid.cells)
    ]
