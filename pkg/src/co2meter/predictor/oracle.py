"""Synthetic energy ground truth and dataset generation.

Energy for a kernel is its roofline time multiplied by a boundedness-dependent
power draw: memory-bound kernels run at idle + 0.6 * (active - idle), compute
bound kernels at full active power.  Prefill energy sums the prefill graph's
kernels once; decode energy sums a fresh graph at every generated position.
Labels receive one multiplicative log-normal noise factor per phase component,
so the total label (noisy prefill + noisy decode) always exceeds the prefill
label.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..workload import (
    COMPUTE_BOUND,
    DeviceSpec,
    LayerGraph,
    LlmConfig,
    Request,
    apply_roofline,
    build_layer_graph,
    classify_node,
    global_features,
    roofline_time,
)
from .data import GraphSample

MEMORY_BOUND_POWER_BLEND = 0.6

RequestSampler = Callable[[np.random.Generator], Request]


def kernel_power(node, dev: DeviceSpec) -> float:
    """Power draw while a kernel runs, from its roofline boundedness."""
    if classify_node(node, dev) == COMPUTE_BOUND:
        return dev.active_power
    return dev.idle_power + MEMORY_BOUND_POWER_BLEND * (
        dev.active_power - dev.idle_power
    )


def graph_energy(graph: LayerGraph, dev: DeviceSpec, num_layers: int) -> float:
    """Joules for `num_layers` executions of the layer graph on a device."""
    per_layer = sum(roofline_time(n, dev) * kernel_power(n, dev) for n in graph.nodes)
    return per_layer * num_layers


def prefill_energy(cfg: LlmConfig, req: Request, dev: DeviceSpec) -> float:
    graph = build_layer_graph(cfg, req, "prefill")
    return graph_energy(graph, dev, cfg.num_layers)


def decode_energy(cfg: LlmConfig, req: Request, dev: DeviceSpec) -> float:
    """Sum of per-step decode energies over every generated position."""
    total = 0.0
    for step in range(req.output_len):
        graph = build_layer_graph(cfg, req, "decode", position=req.prompt_len + step)
        total += graph_energy(graph, dev, cfg.num_layers)
    return total


def request_energy(
    cfg: LlmConfig, req: Request, dev: DeviceSpec
) -> tuple[float, float]:
    """(prefill joules, decode joules) for one request, noise-free."""
    return prefill_energy(cfg, req, dev), decode_energy(cfg, req, dev)


def llm_request_energy(cfg: LlmConfig, req: Request, dev: DeviceSpec) -> float:
    """Whole-request inference energy in joules (oracle ground truth)."""
    p, d = request_energy(cfg, req, dev)
    return p + d


def sample_trace_request(rng: np.random.Generator) -> Request:
    """Log-normal prompt/output lengths loosely shaped like assistant traffic."""
    prompt = int(np.clip(np.round(rng.lognormal(np.log(96.0), 0.7)), 16, 512))
    output = int(np.clip(np.round(rng.lognormal(np.log(64.0), 0.7)), 8, 256))
    return Request(prompt_len=prompt, output_len=output)


def sample_regime_mixed_request(rng: np.random.Generator) -> Request:
    """Half prefill-dominant (long prompt, short answer), half the reverse."""
    if rng.integers(2) == 0:
        prompt = int(rng.integers(192, 448))
        output = int(rng.integers(8, 24))
    else:
        prompt = int(rng.integers(16, 48))
        output = int(rng.integers(128, 288))
    return Request(prompt_len=prompt, output_len=output)


def make_sample(
    cfg: LlmConfig,
    req: Request,
    dev: DeviceSpec,
    rng: np.random.Generator,
    noise_sigma: float,
) -> GraphSample:
    """One labeled sample; graphs carry device roofline times as features."""
    prefill_graph = apply_roofline(build_layer_graph(cfg, req, "prefill"), dev)
    decode_graph = apply_roofline(build_layer_graph(cfg, req, "decode"), dev)
    clean_prefill, clean_decode = request_energy(cfg, req, dev)
    noise = (
        np.exp(rng.normal(0.0, noise_sigma, size=2))
        if noise_sigma > 0
        else np.ones(2)
    )
    label_prefill = clean_prefill * noise[0]
    label_total = label_prefill + clean_decode * noise[1]
    return GraphSample(
        device_id=dev.name,
        prefill_graph=prefill_graph,
        prefill_globals=global_features(cfg, req, "prefill"),
        decode_graph=decode_graph,
        total_globals=global_features(cfg, req, "total"),
        label_prefill_j=float(label_prefill),
        label_total_j=float(label_total),
    )


def gen_oracle_dataset(
    configs: Sequence[LlmConfig],
    devices: Sequence[DeviceSpec],
    n: int,
    noise_sigma: float = 0.05,
    seed: int = 42,
    request_sampler: RequestSampler = sample_trace_request,
) -> list[GraphSample]:
    """Deterministic synthetic dataset over a config/device grid."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    if n > 0 and (not configs or not devices):
        raise ValueError("need at least one config and one device")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        cfg = configs[int(rng.integers(len(configs)))]
        dev = devices[int(rng.integers(len(devices)))]
        req = request_sampler(rng)
        samples.append(make_sample(cfg, req, dev, rng, noise_sigma))
    return samples
