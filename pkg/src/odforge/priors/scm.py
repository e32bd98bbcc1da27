"""Structural-causal-model prior built from a layered, randomly pruned MLP.

Node ``j`` in layer ``l > 0`` evaluates ``v_j = a(sum_i w_ij v_i + e_j)``
over its surviving parents in layer ``l - 1``; input-layer nodes are their
own exogenous noise. ``d`` readout nodes, drawn from the non-input layers,
form the observed features.

Measurement outliers resample one readout node's noise with variance
``s``; structural outliers come from a perturbed copy of the graph in
which edges are broken (weight set to 0) or sign-reversed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..core import LabeledDataset, Metadata, derive_seed, n_outliers_for, rng_from
from ..exceptions import PerturbationBudgetExceeded, ValidationError

ACTIVATIONS = ("relu", "tanh", "sigmoid")
SCM_OUTLIER_KINDS = ("measurement", "structural")
MAX_PERTURBATION_TRIES = 1000


def _activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * x))
    raise ValidationError(f"unknown activation {name!r}")


@dataclass
class ScmConfig:
    d: int
    layers: int
    width: int
    drop_rate: float
    activation: str
    inflation: float
    contamination: float
    n_total: int
    outlier_kind: str = "measurement"
    p_break: float = 0.1
    p_flip: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"activation must be one of {ACTIVATIONS}")
        if self.outlier_kind not in SCM_OUTLIER_KINDS:
            raise ValidationError(f"outlier kind must be one of {SCM_OUTLIER_KINDS}")
        if self.layers < 2 or self.width < 1:
            raise ValidationError("need at least two layers of positive width")
        if self.d > (self.layers - 1) * self.width:
            raise ValidationError(
                f"d={self.d} exceeds the {(self.layers - 1) * self.width} non-input nodes"
            )
        if not 0 <= self.p_break + self.p_flip <= 1:
            raise ValidationError("p_break + p_flip must lie in [0, 1]")
        if not 0 < self.contamination < 0.5:
            raise ValidationError("contamination must lie in (0, 0.5)")


def sample_scm_config(
    seed: int,
    outlier_kind: str = "measurement",
    d_range=(2, 100),
    n_range=(1000, 6000),
    r_range=(0.02, 0.2),
    layer_range=(3, 5),
    width_range=(20, 40),
    drop_range=(0.4, 0.6),
    s_range=(5.0, 10.0),
) -> ScmConfig:
    """Uniform draws from the hyperparameter ranges.

    (layers, width) is redrawn until the non-input layers hold at least
    ``d`` nodes.
    """
    rng = rng_from(seed)
    d = int(rng.integers(d_range[0], d_range[1] + 1))
    while True:
        layers = int(rng.integers(layer_range[0], layer_range[1] + 1))
        width = int(rng.integers(width_range[0], width_range[1] + 1))
        if (layers - 1) * width >= d:
            break
    return ScmConfig(
        d=d,
        layers=layers,
        width=width,
        drop_rate=float(rng.uniform(*drop_range)),
        activation=ACTIVATIONS[int(rng.integers(len(ACTIVATIONS)))],
        inflation=float(rng.uniform(*s_range)),
        contamination=float(rng.uniform(*r_range)),
        n_total=int(rng.integers(n_range[0], n_range[1] + 1)),
        outlier_kind=outlier_kind,
        seed=int(seed),
    )


@dataclass
class ScmGraph:
    layers: int
    width: int
    activation: str
    weights: np.ndarray  # (layers - 1, width, width); [l, i, j] is edge i (layer l) -> j (layer l+1)
    mask: np.ndarray  # same shape, True where the edge survived pruning
    readout: np.ndarray  # global node ids, length d

    @property
    def n_nodes(self) -> int:
        return self.layers * self.width

    def node(self, layer: int, i: int) -> int:
        return layer * self.width + i

    def with_weights(self, weights: np.ndarray) -> "ScmGraph":
        return ScmGraph(self.layers, self.width, self.activation, weights, self.mask, self.readout)

    def descendants(self, sources) -> np.ndarray:
        """Boolean mask over nodes: ``sources`` plus every node reachable from
        them along nonzero-weight edges."""
        reach = np.zeros(self.n_nodes, dtype=bool)
        reach[np.asarray(sources, dtype=np.int64)] = True
        w = self.width
        live = self.weights != 0
        for layer in range(self.layers - 1):
            cur = reach[layer * w:(layer + 1) * w]
            hit = live[layer][cur].any(axis=0)
            reach[(layer + 1) * w:(layer + 2) * w] |= hit
        return reach

    def to_json(self) -> str:
        """Debug dump: surviving edges with weights, plus the readout list."""
        edges = []
        for layer, i, j in zip(*np.nonzero(self.mask)):
            edges.append([self.node(int(layer), int(i)), self.node(int(layer) + 1, int(j)),
                          float(self.weights[layer, i, j])])
        return json.dumps(
            {
                "layers": self.layers,
                "width": self.width,
                "activation": self.activation,
                "readout": [int(r) for r in self.readout],
                "edges": edges,
            }
        )


def build_scm(cfg: ScmConfig, seed: int) -> ScmGraph:
    """Random pruned MLP: N(0, 1) weights, each edge dropped with ``drop_rate``."""
    rng = rng_from(seed)
    shape = (cfg.layers - 1, cfg.width, cfg.width)
    weights = rng.standard_normal(shape)
    mask = rng.random(shape) >= cfg.drop_rate
    weights = np.where(mask, weights, 0.0)
    readout = cfg.width + rng.choice((cfg.layers - 1) * cfg.width, size=cfg.d, replace=False)
    return ScmGraph(cfg.layers, cfg.width, cfg.activation, weights, mask, readout.astype(np.int64))


def scm_node_values(g: ScmGraph, noise) -> np.ndarray:
    """Values of every node for each noise row, in a single layer-by-layer pass."""
    noise = np.asarray(noise, dtype=np.float64)
    single = noise.ndim == 1
    noise = np.atleast_2d(noise)
    if noise.shape[1] != g.n_nodes:
        raise ValidationError(f"noise has {noise.shape[1]} entries, graph has {g.n_nodes} nodes")
    w = g.width
    out = np.empty_like(noise)
    out[:, :w] = noise[:, :w]
    for layer in range(g.layers - 1):
        pre = out[:, layer * w:(layer + 1) * w] @ g.weights[layer]
        nxt = slice((layer + 1) * w, (layer + 2) * w)
        out[:, nxt] = _activate(g.activation, pre + noise[:, nxt])
    return out[0] if single else out


def scm_forward(g: ScmGraph, noise) -> np.ndarray:
    """Readout values (in readout order) for one noise vector or a batch."""
    values = scm_node_values(g, noise)
    return values[..., g.readout]


def measurement_noise(noise: np.ndarray, nodes: np.ndarray, inflation: float, rng) -> np.ndarray:
    """Copy of ``noise`` where row i's entry at ``nodes[i]`` is redrawn from N(0, inflation)."""
    out = np.array(noise, dtype=np.float64, copy=True)
    rows = np.arange(out.shape[0])
    out[rows, nodes] = np.sqrt(inflation) * rng.standard_normal(out.shape[0])
    return out


def perturb_graph(g: ScmGraph, p_break: float, p_flip: float, rng) -> tuple[ScmGraph, np.ndarray]:
    """Break or sign-flip surviving edges until a readout node is affected.

    Returns the perturbed graph and the boolean mask of changed edges.
    """
    for _ in range(MAX_PERTURBATION_TRIES):
        u = rng.random(g.weights.shape)
        broken = g.mask & (u < p_break)
        flipped = g.mask & (u >= p_break) & (u < p_break + p_flip)
        changed = broken | flipped
        if not changed.any():
            continue
        weights = np.where(broken, 0.0, np.where(flipped, -g.weights, g.weights))
        perturbed = g.with_weights(weights)
        if affected_readouts(perturbed, changed).any():
            return perturbed, changed
    raise PerturbationBudgetExceeded(
        f"no perturbation reached a readout node in {MAX_PERTURBATION_TRIES} tries"
    )


def affected_readouts(perturbed: ScmGraph, changed: np.ndarray) -> np.ndarray:
    """Readout mask of nodes whose generating path includes a changed edge."""
    layer, _, j = np.nonzero(changed)
    children = (layer + 1) * perturbed.width + j
    if children.size == 0:
        return np.zeros(perturbed.readout.size, dtype=bool)
    return perturbed.descendants(children)[perturbed.readout]


@dataclass
class ScmRun:
    graph: ScmGraph
    perturbed: ScmGraph | None = None
    changed: np.ndarray | None = None
    intervened: np.ndarray | None = None


def generate_scm_dataset(cfg: ScmConfig, seed: int, return_run: bool = False):
    """Inliers through the frozen graph plus ``round(r * n_total)`` outliers."""
    graph = build_scm(cfg, derive_seed(seed, 1))
    rng = rng_from(derive_seed(seed, 2))
    n_out = n_outliers_for(cfg.contamination, cfg.n_total)
    n_in = cfg.n_total - n_out

    inliers = scm_forward(graph, rng.standard_normal((n_in, graph.n_nodes)))
    run = ScmRun(graph)
    base = rng.standard_normal((n_out, graph.n_nodes))
    if cfg.outlier_kind == "measurement":
        nodes = graph.readout[rng.integers(0, cfg.d, size=n_out)]
        outliers = scm_forward(graph, measurement_noise(base, nodes, cfg.inflation, rng))
        run.intervened = nodes
        kind = "scm_measurement"
    else:
        perturbed, changed = perturb_graph(graph, cfg.p_break, cfg.p_flip, rng)
        outliers = scm_forward(perturbed, base)
        run.perturbed, run.changed = perturbed, changed
        kind = "scm_structural"

    x = np.vstack([inliers, outliers])
    y = np.r_[np.zeros(n_in, dtype=np.int8), np.ones(n_out, dtype=np.int8)]
    perm = rng.permutation(x.shape[0])
    meta = Metadata(
        id=f"scm-{derive_seed(seed, 0):016x}",
        name=kind,
        source="synthetic",
        prior_family="scm",
        outlier_kind=kind,
        seed=int(seed),
        d=cfg.d,
        n_outliers=n_out,
        tags=["synthetic", "scm", cfg.activation],
    )
    data = LabeledDataset(x[perm], y[perm], meta)
    return (data, run) if return_run else data
