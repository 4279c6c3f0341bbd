"""Graph network energy predictor, written out explicitly in numpy.

Two identical towers share the architecture: two rounds of GraphSAGE-style
message passing (h' = ReLU(W [h ; mean of in-neighbor h] + b), hidden width
64), mean pooling over nodes, then a one-hidden-layer ReLU head over
[embedding ; global features] that emits a scalar in log-energy space.  The
prefill tower predicts prefill energy; the total tower additionally receives
a prefill-energy global slot and predicts whole-request energy.

All set reductions (neighbor mean, node pooling) sort their addends by value
before summing so predictions are bitwise invariant to node relabeling.
Backpropagation is hand-derived; `grad_check` verifies it against central
finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..errors import UserInputError
from ..workload import GlobalFeatures, LayerGraph, in_neighbor_lists
from .data import (
    GLOBAL_DIM,
    NODE_FEATURE_DIM,
    NUMERIC_NODE_FEATURES,
    node_feature_matrix,
    globals_vector,
)

HIDDEN_DIM = 64
NUM_ROUNDS = 2

_TOWER_ARRAYS = ("w1", "b1", "w2", "b2", "wh1", "bh1", "wh2", "bh2")


@dataclass
class TowerParams:
    """Weights of one encoder+head tower."""

    w1: np.ndarray  # (hidden, 2 * node_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, 2 * hidden)
    b2: np.ndarray  # (hidden,)
    wh1: np.ndarray  # (hidden, hidden + glob_dim)
    bh1: np.ndarray  # (hidden,)
    wh2: np.ndarray  # (hidden,)
    bh2: np.ndarray  # (1,)

    @property
    def glob_dim(self) -> int:
        return self.wh1.shape[1] - HIDDEN_DIM

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _TOWER_ARRAYS}

    def copy(self) -> "TowerParams":
        return TowerParams(**{k: v.copy() for k, v in self.arrays().items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.arrays().values())


@dataclass
class FeatureNorms:
    """log1p + z-score statistics frozen from the training split."""

    node_mu: np.ndarray  # (len(NUMERIC_NODE_FEATURES),)
    node_sd: np.ndarray
    glob_mu_prefill: np.ndarray  # (GLOBAL_DIM,)
    glob_sd_prefill: np.ndarray
    glob_mu_total: np.ndarray  # (GLOBAL_DIM + 1,) — includes prefill-energy slot
    glob_sd_total: np.ndarray


@dataclass
class GnnParams:
    """Everything needed to reproduce predictions: two towers plus norms."""

    prefill: TowerParams
    total: TowerParams
    norms: FeatureNorms


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_out, fan_in = shape if len(shape) == 2 else (1, shape[0])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_tower(rng: np.random.Generator, node_dim: int, glob_dim: int) -> TowerParams:
    return TowerParams(
        w1=_glorot(rng, (HIDDEN_DIM, 2 * node_dim)),
        b1=np.zeros(HIDDEN_DIM),
        w2=_glorot(rng, (HIDDEN_DIM, 2 * HIDDEN_DIM)),
        b2=np.zeros(HIDDEN_DIM),
        wh1=_glorot(rng, (HIDDEN_DIM, HIDDEN_DIM + glob_dim)),
        bh1=np.zeros(HIDDEN_DIM),
        wh2=_glorot(rng, (HIDDEN_DIM,)),
        bh2=np.zeros(1),
    )


def identity_norms() -> FeatureNorms:
    n_node = len(NUMERIC_NODE_FEATURES)
    return FeatureNorms(
        node_mu=np.zeros(n_node),
        node_sd=np.ones(n_node),
        glob_mu_prefill=np.zeros(GLOBAL_DIM),
        glob_sd_prefill=np.ones(GLOBAL_DIM),
        glob_mu_total=np.zeros(GLOBAL_DIM + 1),
        glob_sd_total=np.ones(GLOBAL_DIM + 1),
    )


def init_params(seed: int) -> GnnParams:
    rng = np.random.default_rng(seed)
    return GnnParams(
        prefill=init_tower(rng, NODE_FEATURE_DIM, GLOBAL_DIM),
        total=init_tower(rng, NODE_FEATURE_DIM, GLOBAL_DIM + 1),
        norms=identity_norms(),
    )


# ---------------------------------------------------------------------------
# Normalization


def _log1p_scale(raw: np.ndarray, mu: np.ndarray, sd: np.ndarray) -> np.ndarray:
    return (np.log1p(raw) - mu) / sd


def fit_feature_norms(
    node_raws: Sequence[np.ndarray],
    glob_raw_prefill: np.ndarray,
    glob_raw_total: np.ndarray,
) -> FeatureNorms:
    """Statistics of log1p-transformed features; zero-variance columns get sd=1."""
    n_node = len(NUMERIC_NODE_FEATURES)
    stacked = np.log1p(np.vstack([m[:, :n_node] for m in node_raws]))

    def stats(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mu = mat.mean(axis=0)
        sd = mat.std(axis=0)
        sd[sd < 1e-12] = 1.0
        return mu, sd

    node_mu, node_sd = stats(stacked)
    gp_mu, gp_sd = stats(np.log1p(glob_raw_prefill))
    gt_mu, gt_sd = stats(np.log1p(glob_raw_total))
    return FeatureNorms(node_mu, node_sd, gp_mu, gp_sd, gt_mu, gt_sd)


def normalize_nodes(raw: np.ndarray, norms: FeatureNorms) -> np.ndarray:
    """Normalized node matrix: scaled numeric columns, one-hot kept as is."""
    n_node = len(NUMERIC_NODE_FEATURES)
    out = raw.copy()
    out[:, :n_node] = _log1p_scale(raw[:, :n_node], norms.node_mu, norms.node_sd)
    return out


def normalize_globals(raw: np.ndarray, norms: FeatureNorms, phase: str) -> np.ndarray:
    if phase == "prefill":
        return _log1p_scale(raw, norms.glob_mu_prefill, norms.glob_sd_prefill)
    return _log1p_scale(raw, norms.glob_mu_total, norms.glob_sd_total)


# ---------------------------------------------------------------------------
# Forward / backward


def _sorted_sum(values: np.ndarray) -> np.ndarray:
    """Column sums with addends sorted by value (label-order independent)."""
    return np.sort(values, axis=0).sum(axis=0)


def _neighbor_mean(h: np.ndarray, preds: Sequence[Sequence[int]]) -> np.ndarray:
    out = np.zeros_like(h)
    for v, ps in enumerate(preds):
        if ps:
            out[v] = _sorted_sum(h[list(ps)]) / len(ps)
    return out


def _aggregation_matrix(n: int, preds: Sequence[Sequence[int]]) -> np.ndarray:
    a = np.zeros((n, n))
    for v, ps in enumerate(preds):
        for p in ps:
            a[v, p] = 1.0 / len(ps)
    return a


def forward_tower(
    tower: TowerParams,
    h0: np.ndarray,
    preds: Sequence[Sequence[int]],
    g: np.ndarray,
) -> tuple[float, dict]:
    """Log-energy prediction for one normalized sample, with a backward cache."""
    c0 = np.concatenate([h0, _neighbor_mean(h0, preds)], axis=1)
    z1 = c0 @ tower.w1.T + tower.b1
    h1 = np.maximum(z1, 0.0)

    c1 = np.concatenate([h1, _neighbor_mean(h1, preds)], axis=1)
    z2 = c1 @ tower.w2.T + tower.b2
    h2 = np.maximum(z2, 0.0)

    pooled = _sorted_sum(h2) / len(h2)
    zh = np.concatenate([pooled, g])
    u_pre = tower.wh1 @ zh + tower.bh1
    u = np.maximum(u_pre, 0.0)
    y = float(tower.wh2 @ u + tower.bh2[0])

    cache = {
        "c0": c0, "z1": z1, "h1": h1, "c1": c1, "z2": z2, "h2": h2,
        "zh": zh, "u_pre": u_pre, "u": u,
        "agg": _aggregation_matrix(len(h0), preds),
    }
    return y, cache


def backward_tower(
    tower: TowerParams, cache: dict, dy: float
) -> dict[str, np.ndarray]:
    """Gradients of dy * y with respect to every tower array."""
    n = cache["h2"].shape[0]

    du = dy * tower.wh2
    du_pre = du * (cache["u_pre"] > 0)
    grads = {
        "wh2": dy * cache["u"],
        "bh2": np.array([dy]),
        "wh1": np.outer(du_pre, cache["zh"]),
        "bh1": du_pre,
    }
    dzh = tower.wh1.T @ du_pre
    dpooled = dzh[:HIDDEN_DIM]

    dh2 = np.tile(dpooled / n, (n, 1))
    dz2 = dh2 * (cache["z2"] > 0)
    grads["w2"] = dz2.T @ cache["c1"]
    grads["b2"] = dz2.sum(axis=0)

    dc1 = dz2 @ tower.w2
    dh1 = dc1[:, :HIDDEN_DIM] + cache["agg"].T @ dc1[:, HIDDEN_DIM:]
    dz1 = dh1 * (cache["z1"] > 0)
    grads["w1"] = dz1.T @ cache["c0"]
    grads["b1"] = dz1.sum(axis=0)
    return grads


def sample_loss_and_grads(
    tower: TowerParams,
    h0: np.ndarray,
    preds: Sequence[Sequence[int]],
    g: np.ndarray,
    log_target: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """Squared log-space error for one sample plus its parameter gradients."""
    y, cache = forward_tower(tower, h0, preds, g)
    err = y - log_target
    grads = backward_tower(tower, cache, 2.0 * err)
    return err * err, grads


# ---------------------------------------------------------------------------
# Prediction ops


def _encode_inputs(
    graph: LayerGraph,
    gf: GlobalFeatures,
    norms: FeatureNorms,
    phase: str,
    prefill_energy_j: float | None = None,
) -> tuple[np.ndarray, tuple, np.ndarray]:
    h0 = normalize_nodes(node_feature_matrix(graph), norms)
    raw_g = globals_vector(gf, with_prefill_energy=False)
    if phase == "total":
        if prefill_energy_j is None:
            raise ValueError("total-phase prediction needs a prefill energy")
        raw_g = np.concatenate([raw_g, [prefill_energy_j]])
    g = normalize_globals(raw_g, norms, phase)
    return h0, in_neighbor_lists(graph), g


def predict_prefill(
    graph: LayerGraph, gf: GlobalFeatures, params: GnnParams
) -> float:
    """Prefill energy in joules (strictly positive by construction)."""
    if gf.phase != "prefill":
        raise ValueError("prefill prediction needs prefill-phase globals")
    h0, preds, g = _encode_inputs(graph, gf, params.norms, "prefill")
    y, _ = forward_tower(params.prefill, h0, preds, g)
    return float(np.exp(y))


def predict_total(
    graph: LayerGraph, gf: GlobalFeatures, params: GnnParams
) -> float:
    """Whole-request energy in joules; globals must carry the prefill energy."""
    if gf.phase != "total":
        raise ValueError("total prediction needs total-phase globals")
    if gf.prefill_energy_j is None:
        raise ValueError("total prediction needs globals with a prefill energy")
    h0, preds, g = _encode_inputs(
        graph, gf, params.norms, "total", prefill_energy_j=gf.prefill_energy_j
    )
    y, _ = forward_tower(params.total, h0, preds, g)
    return float(np.exp(y))


# ---------------------------------------------------------------------------
# Gradient check


def flatten_grads(grads: Mapping[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(grads[name]) for name in _TOWER_ARRAYS])


def grad_check(
    tower: TowerParams,
    h0: np.ndarray,
    preds: Sequence[Sequence[int]],
    g: np.ndarray,
    log_target: float,
    eps: float = 1e-5,
    n_checks: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Checks a random subset of at least `n_checks` parameters across all tower
    arrays (all of them when the tower is small).
    """
    _, grads = sample_loss_and_grads(tower, h0, preds, g, log_target)
    flat_analytic = flatten_grads(grads)

    total = tower.n_params()
    rng = np.random.default_rng(seed)
    if total <= n_checks:
        picks = np.arange(total)
    else:
        picks = rng.choice(total, size=n_checks, replace=False)

    sizes = [tower.arrays()[name].size for name in _TOWER_ARRAYS]
    offsets = np.cumsum([0] + sizes)

    def loss_with(idx: int, delta: float) -> float:
        arr_i = int(np.searchsorted(offsets, idx, side="right") - 1)
        name = _TOWER_ARRAYS[arr_i]
        arr = tower.arrays()[name]
        flat_idx = idx - offsets[arr_i]
        old = arr.flat[flat_idx]
        arr.flat[flat_idx] = old + delta
        y, _ = forward_tower(tower, h0, preds, g)
        arr.flat[flat_idx] = old
        err = y - log_target
        return err * err

    worst = 0.0
    for idx in picks:
        numeric = (loss_with(int(idx), eps) - loss_with(int(idx), -eps)) / (2.0 * eps)
        analytic = flat_analytic[int(idx)]
        denom = max(abs(numeric) + abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


# ---------------------------------------------------------------------------
# Serialization


def params_to_json(params: GnnParams) -> dict:
    def tower_doc(t: TowerParams) -> dict:
        return {name: arr.tolist() for name, arr in t.arrays().items()}

    norms = params.norms
    return {
        "format": "co2meter-gnn-params",
        "version": 1,
        "hidden_dim": HIDDEN_DIM,
        "num_rounds": NUM_ROUNDS,
        "prefill": tower_doc(params.prefill),
        "total": tower_doc(params.total),
        "norms": {
            name: getattr(norms, name).tolist()
            for name in (f.name for f in fields(FeatureNorms))
        },
    }


def params_from_json(doc: Mapping) -> GnnParams:
    try:
        def tower(d: Mapping) -> TowerParams:
            return TowerParams(**{k: np.array(d[k], dtype=float) for k in _TOWER_ARRAYS})

        norms = FeatureNorms(
            **{
                f.name: np.array(doc["norms"][f.name], dtype=float)
                for f in fields(FeatureNorms)
            }
        )
        return GnnParams(
            prefill=tower(doc["prefill"]), total=tower(doc["total"]), norms=norms
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise UserInputError(f"malformed predictor params: {exc}") from exc


def save_params_json(path: str | Path, params: GnnParams, meta: dict | None = None) -> None:
    doc = params_to_json(params)
    if meta:
        doc["meta"] = meta
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_params_json(path: str | Path) -> tuple[GnnParams, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UserInputError(f"cannot read predictor params {path}: {exc}") from exc
    return params_from_json(doc), doc.get("meta", {})
