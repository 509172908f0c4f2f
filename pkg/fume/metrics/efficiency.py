"""fume/metrics/efficiency.py

Parameter and MAC counting (symbolic, no data pass) and the latency
protocol: ``warmup`` untimed forwards, then the mean wall-clock time of
``iterations`` timed single-sample forwards.
"""

import logging
import time
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

WARMUP = 100
ITERATIONS = 1000


def count_params(graph: Any) -> int:
    """Total parameter entries of a layer or network (shared weights counted once)."""
    return graph.store.num_parameters()


def count_macs(graph: Any, input_shape: Sequence[int]) -> int:
    """Multiply-accumulates of one forward on ``input_shape``."""
    return int(graph.macs(tuple(input_shape)))


@dataclass(frozen=True)
class BenchResult:
    latency_ms: float
    fps: float
    warmup: int
    iterations: int


def bench_latency(graph: Any, input_shape: Sequence[int], warmup: int = WARMUP,
                  iterations: int = ITERATIONS, seed: int = 0) -> BenchResult:
    """
    Time eval-mode forwards of ``graph`` on a random input.

    Args:
        graph: Network or layer with ``forward(x, train)``
        input_shape: Single-sample input shape, e.g. (1, 2, 512, 512)
        warmup: Untimed forwards before measuring
        iterations: Timed forwards

    Returns:
        BenchResult with the mean latency and FPS = 1000 / latency_ms
    """
    if iterations <= 0:
        raise ValueError(f"iterations must be positive, got {iterations}")
    dtype = getattr(graph, "dtype", np.float32)
    x = np.random.default_rng(seed).random(tuple(input_shape)).astype(dtype)

    for _ in range(warmup):
        graph.forward(x, False)
    start = time.perf_counter()
    for _ in range(iterations):
        graph.forward(x, False)
    elapsed = time.perf_counter() - start

    latency_ms = 1000.0 * elapsed / iterations
    result = BenchResult(latency_ms=latency_ms, fps=1000.0 / latency_ms, warmup=warmup, iterations=iterations)
    logger.info(f"Latency over {iterations} iterations ({warmup} warmup): {latency_ms:.3f} ms, {result.fps:.1f} FPS")
    return result


@dataclass(frozen=True)
class EfficiencyRow:
    variant: str
    params: int
    macs: int

    @property
    def params_m(self) -> float:
        return self.params / 1e6

    @property
    def macs_g(self) -> float:
        return self.macs / 1e9


def efficiency_table(size: int = 512, seed: int = 0, variants: Optional[Sequence[str]] = None) -> List[EfficiencyRow]:
    """Parameters and MACs at dual ``size`` x ``size`` input for each variant."""
    from fume.net import ABLATION_ORDER, build

    names = list(variants) if variants is not None else [v.value for v in ABLATION_ORDER]
    rows = []
    for name in names:
        net = build(name, seed)
        rows.append(EfficiencyRow(name, count_params(net), count_macs(net, (1, 2, size, size))))
    return rows
