"""Training samples for the energy predictor: featurization and JSONL I/O.

A GraphSample is one inference request measured on one device.  It carries
phase-specific inputs — the prefill kernel graph with prefill-phase globals,
and the decode-representative kernel graph (mid-sequence position) with
whole-request globals — plus the measured prefill and total energies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import UserInputError
from ..workload import (
    GlobalFeatures,
    KernelNode,
    LayerGraph,
    KERNEL_KINDS,
)

NUMERIC_NODE_FEATURES = (
    "flops",
    "weight_bytes_loaded",
    "act_bytes_loaded",
    "act_bytes_stored",
    "kv_bytes_loaded",
    "kv_bytes_stored",
    "est_time_s",
    "arithmetic_intensity",
)

GLOBAL_FEATURE_NAMES = (
    "total_ops",
    "layer_count",
    "hidden_dim",
    "ffn_dim",
    "prompt_len",
    "output_len",
    "weight_memory_bytes",
    "kv_cache_bytes",
    "phase_flag",
)

NODE_FEATURE_DIM = len(NUMERIC_NODE_FEATURES) + len(KERNEL_KINDS)
GLOBAL_DIM = len(GLOBAL_FEATURE_NAMES)

_KIND_INDEX = {kind: i for i, kind in enumerate(KERNEL_KINDS)}


@dataclass(frozen=True)
class GraphSample:
    """One request on one device, with phase-specific predictor inputs."""

    device_id: str
    prefill_graph: LayerGraph
    prefill_globals: GlobalFeatures
    decode_graph: LayerGraph
    total_globals: GlobalFeatures
    label_prefill_j: float
    label_total_j: float

    def __post_init__(self) -> None:
        if self.prefill_graph.phase != "prefill":
            raise ValueError("prefill_graph must be a prefill-phase graph")
        if self.decode_graph.phase != "decode":
            raise ValueError("decode_graph must be a decode-phase graph")
        if self.prefill_globals.phase != "prefill":
            raise ValueError("prefill_globals must be prefill-phase features")
        if self.total_globals.phase != "total":
            raise ValueError("total_globals must be total-phase features")
        if not 0 < self.label_prefill_j <= self.label_total_j:
            raise ValueError("labels must satisfy 0 < prefill <= total")


def node_feature_matrix(graph: LayerGraph) -> np.ndarray:
    """Raw (N, 18) node features: 8 numeric columns then a 10-wide kind one-hot."""
    n = len(graph.nodes)
    out = np.zeros((n, NODE_FEATURE_DIM))
    for i, node in enumerate(graph.nodes):
        for j, field in enumerate(NUMERIC_NODE_FEATURES):
            out[i, j] = getattr(node, field)
        out[i, len(NUMERIC_NODE_FEATURES) + _KIND_INDEX[node.kind]] = 1.0
    return out


def globals_vector(gf: GlobalFeatures, with_prefill_energy: bool = False) -> np.ndarray:
    """Raw global feature vector; optionally appends the prefill energy slot."""
    phase_flag = 0.0 if gf.phase == "prefill" else 1.0
    values = [
        gf.total_ops,
        float(gf.layer_count),
        float(gf.hidden_dim),
        float(gf.ffn_dim),
        float(gf.prompt_len),
        float(gf.output_len),
        gf.weight_memory_bytes,
        gf.kv_cache_bytes,
        phase_flag,
    ]
    if with_prefill_energy:
        if gf.prefill_energy_j is None:
            raise ValueError("globals carry no prefill energy")
        values.append(gf.prefill_energy_j)
    return np.array(values)


def split_indices(
    n: int, train_frac: float, val_frac: float, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic shuffled train/val/test index split."""
    if not 0 < train_frac < 1 or val_frac < 0 or train_frac + val_frac > 1:
        raise ValueError("invalid split fractions")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * train_frac))
    n_val = int(round(n * val_frac))
    return (
        perm[:n_train],
        perm[n_train:n_train + n_val],
        perm[n_train + n_val:],
    )


# ---------------------------------------------------------------------------
# JSONL serialization


def _graph_to_json(graph: LayerGraph) -> dict:
    return {
        "phase": graph.phase,
        "nodes": [
            {
                "kind": n.kind,
                "flops": n.flops,
                "weight_bytes_loaded": n.weight_bytes_loaded,
                "act_bytes_loaded": n.act_bytes_loaded,
                "act_bytes_stored": n.act_bytes_stored,
                "kv_bytes_loaded": n.kv_bytes_loaded,
                "kv_bytes_stored": n.kv_bytes_stored,
                "est_time_s": n.est_time_s,
            }
            for n in graph.nodes
        ],
        "edges": [[src, dst] for src, dst in graph.edges],
    }


def _graph_from_json(doc: Mapping) -> LayerGraph:
    nodes = tuple(KernelNode(**n) for n in doc["nodes"])
    edges = tuple((int(src), int(dst)) for src, dst in doc["edges"])
    return LayerGraph(nodes=nodes, edges=edges, phase=doc["phase"])


def _globals_to_json(gf: GlobalFeatures) -> dict:
    return {
        "total_ops": gf.total_ops,
        "layer_count": gf.layer_count,
        "hidden_dim": gf.hidden_dim,
        "ffn_dim": gf.ffn_dim,
        "prompt_len": gf.prompt_len,
        "output_len": gf.output_len,
        "weight_memory_bytes": gf.weight_memory_bytes,
        "kv_cache_bytes": gf.kv_cache_bytes,
        "phase": gf.phase,
    }


def _globals_from_json(doc: Mapping) -> GlobalFeatures:
    return GlobalFeatures(
        total_ops=float(doc["total_ops"]),
        layer_count=int(doc["layer_count"]),
        hidden_dim=int(doc["hidden_dim"]),
        ffn_dim=int(doc["ffn_dim"]),
        prompt_len=int(doc["prompt_len"]),
        output_len=int(doc["output_len"]),
        weight_memory_bytes=float(doc["weight_memory_bytes"]),
        kv_cache_bytes=float(doc["kv_cache_bytes"]),
        phase=doc["phase"],
    )


def sample_to_json(sample: GraphSample) -> dict:
    return {
        "device_id": sample.device_id,
        "prefill_graph": _graph_to_json(sample.prefill_graph),
        "prefill_globals": _globals_to_json(sample.prefill_globals),
        "decode_graph": _graph_to_json(sample.decode_graph),
        "total_globals": _globals_to_json(sample.total_globals),
        "label_prefill_j": sample.label_prefill_j,
        "label_total_j": sample.label_total_j,
    }


def sample_from_json(doc: Mapping) -> GraphSample:
    try:
        return GraphSample(
            device_id=doc["device_id"],
            prefill_graph=_graph_from_json(doc["prefill_graph"]),
            prefill_globals=_globals_from_json(doc["prefill_globals"]),
            decode_graph=_graph_from_json(doc["decode_graph"]),
            total_globals=_globals_from_json(doc["total_globals"]),
            label_prefill_j=float(doc["label_prefill_j"]),
            label_total_j=float(doc["label_total_j"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise UserInputError(f"malformed graph sample: {exc}") from exc


def write_dataset_jsonl(path: str | Path, samples: Iterable[GraphSample]) -> None:
    with open(path, "w") as fh:
        for sample in samples:
            fh.write(json.dumps(sample_to_json(sample), sort_keys=True))
            fh.write("\n")


def read_dataset_jsonl(path: str | Path) -> list[GraphSample]:
    samples = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UserInputError(f"cannot read dataset {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            samples.append(sample_from_json(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise UserInputError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        except UserInputError as exc:
            raise UserInputError(f"{path}:{lineno}: {exc}") from exc
    return samples
