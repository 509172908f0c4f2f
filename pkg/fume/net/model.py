"""fume/net/model.py

Assembly and routing of the dual-stream network.

Two gas frames share one encoder. Each stream's deep features are refined
by its own gamma-gated self-attention; the refined maps are fused by channel
attention for the classification head, and each stream is decoded into a
3-class segmentation map. Variants switch parts of this graph off or swap
them, as described by ``ModelVariantConfig``.

Inputs are stacked as ``(N, 2, H, W)``: channel 0 holds CO2 frames, channel 1
CH4 frames, both scaled to [0, 1]. An absent modality is an all-zero channel
flagged off in the ``(N, 2)`` modality mask. Absent frames never reach the
encoder, and fusion sees the present stream twice, so a sample missing CH4
is routed exactly as the co2-only variant routes it.

Example:
    >>> net = build("fume", seed=0)
    >>> out = net.predict(np.zeros((1, 2, 64, 64)))
    >>> out.seg_co2.shape, out.class_logits.shape
    ((1, 3, 64, 64), (1, 3))
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from fume.errors import DataError, ShapeError
from fume.kernels.layers import Attention, ParamStore
from fume.net.blocks import (
    FUSED_CHANNELS,
    HIGH_CHANNELS,
    NUM_CLASSES,
    ChannelAttentionFusion,
    ClassificationHead,
    Encoder,
    FeatureFusionDecoder,
)
from fume.net.variants import STREAMS, ModelVariantConfig, Variant

logger = logging.getLogger(__name__)

Tensor = np.ndarray

KEY_CHANNELS = 16

CHANNEL = {"co2": 0, "ch4": 1}


@dataclass
class ForwardOutput:
    """Segmentation score maps (N, 3, H, W) per stream and class logits (N, 3)."""
    seg_co2: Optional[Tensor] = None
    seg_ch4: Optional[Tensor] = None
    class_logits: Optional[Tensor] = None

    def seg(self, stream: str) -> Optional[Tensor]:
        return self.seg_co2 if stream == "co2" else self.seg_ch4


class FumeNet:
    """The assembled layer graph of one variant; parameters live in ``store``."""

    def __init__(self, variant: Union[str, Variant, ModelVariantConfig], seed: int = 0, dtype=np.float64):
        self.config = ModelVariantConfig.parse(variant)
        self.seed = int(seed)
        self.store = ParamStore(dtype)
        rng = np.random.default_rng(self.seed)
        self.dropout_rng = np.random.default_rng([self.seed, 1])

        self.encoder = Encoder("encoder", self.store, rng)
        self.attention: Dict[str, Attention] = {
            s: Attention(f"attention.{s}", self.store, HIGH_CHANNELS, rng, KEY_CHANNELS)
            for s in self.config.streams
        }
        self.cross: Dict[str, Attention] = {}
        if self.config.cross_attention:
            self.cross = {
                s: Attention(f"cross.{s}", self.store, HIGH_CHANNELS, rng, KEY_CHANNELS) for s in STREAMS
            }
        self.fusion = None
        self.head = None
        if self.config.has_fusion:
            self.fusion = ChannelAttentionFusion("fusion", self.store, rng, gated=self.config.channel_attention)
            self.head = ClassificationHead("head", self.store, rng, self.dropout_rng)
        self.decoders: Dict[str, FeatureFusionDecoder] = {}
        if self.config.has_decoders:
            self.decoders = {s: FeatureFusionDecoder(f"decoder.{s}", self.store, rng) for s in self.config.streams}

        logger.debug(f"Built {self.config.name} (seed {self.seed}) with {self.num_parameters()} parameters")

    @property
    def variant(self) -> Variant:
        return self.config.variant

    @property
    def dtype(self):
        return self.store.dtype

    def num_parameters(self) -> int:
        return self.store.num_parameters()

    # -- individual stages -------------------------------------------------

    def encode(self, x: Tensor, train: bool = False) -> Tuple[Tensor, Tensor]:
        """Shared encoder on (N, 1, H, W) frames -> ``(F_l, F_h)``."""
        (low, high), _ = self.encoder.forward(np.asarray(x, dtype=self.dtype), train)
        return low, high

    def self_attend(self, high: Tensor, stream: str = "co2") -> Tensor:
        return self.attention[stream](high)

    def fuse(self, f_co2: Tensor, f_ch4: Tensor) -> Tensor:
        if self.fusion is None:
            raise ShapeError(f"variant {self.config.name} has no fusion block")
        if f_co2.shape != f_ch4.shape:
            raise ShapeError(f"fusion inputs differ: {f_co2.shape} vs {f_ch4.shape}")
        return self.fusion(np.concatenate([f_co2, f_ch4], axis=1))

    def decode(self, low: Tensor, high_refined: Tensor, stream: str = "co2") -> Tensor:
        return self.decoders[stream]((low, high_refined))

    def classify(self, fused: Tensor) -> Tensor:
        if self.head is None:
            raise ShapeError(f"variant {self.config.name} has no classification head")
        return self.head(fused)

    # -- whole graph ---------------------------------------------------------

    def _check_inputs(self, x: Tensor, modality_mask: Optional[Tensor]) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 2:
            raise ShapeError(f"expected stacked frames (N, 2, H, W), got {x.shape}")
        Encoder.check_input((x.shape[0], 1) + tuple(x.shape[2:]))
        if modality_mask is None:
            return np.ones((x.shape[0], 2), dtype=bool)
        mask = np.asarray(modality_mask, dtype=bool).reshape(x.shape[0], 2)
        if not mask.any(axis=1).all():
            raise DataError("a sample has neither modality present")
        return mask

    def _routing(self, mask: Tensor) -> Dict[str, Tensor]:
        """
        Sample rows encoded per stream, in stream order.

        Dual-stream variants encode only present frames; a stream with no
        present sample is dropped. Single-stream variants always encode
        their frame, zero-padded or not.
        """
        n = mask.shape[0]
        if len(self.config.streams) == 1:
            return {self.config.streams[0]: np.arange(n)}
        rows = {s: np.flatnonzero(mask[:, CHANNEL[s]]) for s in self.config.streams}
        return {s: r for s, r in rows.items() if r.size}

    @staticmethod
    def _fusion_plan(rows: Dict[str, Tensor], n: int) -> Dict[str, List[Tuple[str, Tensor, Tensor]]]:
        """
        ``(source stream, batch rows, source rows)`` triples filling each fusion slot.

        A slot whose stream is absent for a sample takes the other stream's
        refined features, as a single-stream variant does for every sample.
        """
        position = {}
        for s, r in rows.items():
            position[s] = np.full(n, -1)
            position[s][r] = np.arange(r.size)
        plan = {}
        for slot in STREAMS:
            parts = []
            if slot in rows:
                parts.append((slot, rows[slot], np.arange(rows[slot].size)))
                missing = np.flatnonzero(position[slot] < 0)
            else:
                missing = np.arange(n)
            if missing.size:
                other = next(s for s in rows if s != slot)
                parts.append((other, missing, position[other][missing]))
            plan[slot] = parts
        return plan

    @staticmethod
    def _gather(refined: Dict[str, Tensor], parts, n: int) -> Tensor:
        first = next(iter(refined.values()))
        out = np.empty((n,) + first.shape[1:], dtype=first.dtype)
        for source, batch_rows, source_rows in parts:
            out[batch_rows] = refined[source][source_rows]
        return out

    def forward(self, x: Tensor, train: bool = False, modality_mask: Optional[Tensor] = None) -> Tuple[ForwardOutput, Any]:
        """
        Full forward pass.

        Args:
            x: Stacked frames (N, 2, H, W), channel 0 = CO2, 1 = CH4
            train: Batch statistics, running-stat updates and dropout
            modality_mask: (N, 2) presence flags; absent frames must be zero

        Returns:
            ForwardOutput and the cache for ``backward``. Score maps of a
            stream are zero for samples where it is absent.

        Raises:
            ShapeError: On bad shapes or extents not divisible by 32
            DataError: When a sample has no modality at all
        """
        x = np.asarray(x, dtype=self.dtype)
        mask = self._check_inputs(x, modality_mask)
        n = x.shape[0]
        rows = self._routing(mask)
        stacked = np.concatenate([x[rows[s], CHANNEL[s]][:, None] for s in rows], axis=0)

        (low, high), enc_cache = self.encoder.forward(stacked, train)
        bounds = dict(zip(rows, np.cumsum([0] + [r.size for r in rows.values()])[:-1]))
        lows = {s: low[bounds[s]:bounds[s] + r.size] for s, r in rows.items()}
        highs = {s: high[bounds[s]:bounds[s] + r.size] for s, r in rows.items()}

        refined, attn_caches = {}, {}
        for s in rows:
            block = self.attention.get(s)
            if block is None:
                refined[s] = highs[s]
                continue
            refined[s], attn_caches[s] = block.forward(highs[s], train)

        out = ForwardOutput()
        plan = fusion_cache = head_cache = None
        cross_caches = {}
        if self.fusion is not None:
            plan = self._fusion_plan(rows, n)
            slots = {slot: self._gather(refined, plan[slot], n) for slot in STREAMS}
            if self.cross:
                slots = {
                    "co2": self._cross(slots, "co2", "ch4", train, cross_caches),
                    "ch4": self._cross(slots, "ch4", "co2", train, cross_caches),
                }
            fused, fusion_cache = self.fusion.forward(np.concatenate([slots[s] for s in STREAMS], axis=1), train)
            out.class_logits, head_cache = self.head.forward(fused, train)

        decoder_caches = {}
        for s, decoder in self.decoders.items():
            seg = np.zeros((n, NUM_CLASSES) + x.shape[2:], dtype=self.dtype)
            if s in rows:
                seg_rows, decoder_caches[s] = decoder.forward((lows[s], refined[s]), train)
                seg[rows[s]] = seg_rows
            setattr(out, f"seg_{s}", seg)

        cache = (n, rows, low.shape[1:], high.shape[1:], enc_cache, attn_caches, plan, cross_caches,
                 fusion_cache, head_cache, decoder_caches)
        return out, cache

    def _cross(self, slots, query: str, context: str, train: bool, caches: Dict[str, Any]) -> Tensor:
        y, caches[query] = self.cross[query].forward(slots[query], train, context=slots[context])
        return y

    def backward(self, grads: ForwardOutput, cache: Any) -> Tensor:
        """Accumulate parameter gradients; returns the (N, 2, H, W) input gradient."""
        (n, rows, low_tail, high_tail, enc_cache, attn_caches, plan, cross_caches,
         fusion_cache, head_cache, decoder_caches) = cache
        d_low: Dict[str, Tensor] = {}
        d_refined: Dict[str, Tensor] = {}

        def add(target, key, value):
            target[key] = value if key not in target else target[key] + value

        for s, decoder_cache in decoder_caches.items():
            dseg = grads.seg(s)
            if dseg is None:
                continue
            dl, dh = self.decoders[s].backward(dseg[rows[s]], decoder_cache)
            add(d_low, s, dl)
            add(d_refined, s, dh)

        if self.head is not None and grads.class_logits is not None:
            dfused = self.head.backward(grads.class_logits, head_cache)
            dcat = self.fusion.backward(dfused, fusion_cache)
            d_slots = {"co2": dcat[:, :HIGH_CHANNELS], "ch4": dcat[:, HIGH_CHANNELS:FUSED_CHANNELS]}
            if self.cross:
                d_in = {}
                for s, other in (("co2", "ch4"), ("ch4", "co2")):
                    dq, dctx = self.cross[s].backward_pair(d_slots[s], cross_caches[s])
                    add(d_in, s, dq)
                    add(d_in, other, dctx)
                d_slots = d_in
            scattered = {s: np.zeros((r.size,) + tuple(high_tail), dtype=self.dtype) for s, r in rows.items()}
            for slot in STREAMS:
                for source, batch_rows, source_rows in plan[slot]:
                    scattered[source][source_rows] += d_slots[slot][batch_rows]
            for s, g in scattered.items():
                add(d_refined, s, g)

        d_high_parts, d_low_parts = [], []
        for s, r in rows.items():
            dh = d_refined.get(s)
            if dh is not None and s in attn_caches:
                dh = self.attention[s].backward(dh, attn_caches[s])
            d_high_parts.append(self._or_zeros(dh, r.size, high_tail))
            d_low_parts.append(self._or_zeros(d_low.get(s), r.size, low_tail))

        dx_stacked = self.encoder.backward(
            (np.concatenate(d_low_parts, axis=0), np.concatenate(d_high_parts, axis=0)),
            enc_cache,
        )
        dx = np.zeros((n, 2) + dx_stacked.shape[2:], dtype=dx_stacked.dtype)
        offset = 0
        for s, r in rows.items():
            dx[r, CHANNEL[s]] = dx_stacked[offset:offset + r.size, 0]
            offset += r.size
        return dx

    def _or_zeros(self, grad: Optional[Tensor], count: int, tail) -> Tensor:
        return np.zeros((count,) + tuple(tail), dtype=self.dtype) if grad is None else grad

    def predict(self, x: Tensor, modality_mask: Optional[Tensor] = None) -> ForwardOutput:
        """Eval-mode forward without keeping a cache."""
        return self.forward(x, train=False, modality_mask=modality_mask)[0]

    def predict_pair(self, pair) -> ForwardOutput:
        """Eval-mode forward on one GasFramePair; uint8 frames are scaled to [0, 1]."""
        x = pair.frames()[None].astype(self.dtype) / 255.0
        return self.predict(x, np.array([pair.modality_mask], dtype=bool))

    # -- efficiency ----------------------------------------------------------

    def macs(self, input_shape: Tuple[int, int, int, int]) -> int:
        """Multiply-accumulates of one forward on stacked input ``(N, 2, H, W)``."""
        n, _, h, w = input_shape
        streams = self.config.streams
        frame = (n, 1, h, w)
        low, high = self.encoder.output_shape(frame)
        total = len(streams) * self.encoder.macs(frame)
        total += sum(block.macs(high) for block in self.attention.values())
        total += sum(block.macs(high, high) for block in self.cross.values())
        if self.fusion is not None:
            fused_in = (n, FUSED_CHANNELS) + tuple(high[2:])
            total += self.fusion.macs(fused_in)
            total += self.head.macs(self.fusion.output_shape(fused_in))
        total += sum(decoder.macs(high, low) for decoder in self.decoders.values())
        return total


def build(variant: Union[str, Variant, ModelVariantConfig], seed: int = 0, dtype=np.float64) -> FumeNet:
    """
    Assemble a variant with deterministic parameters.

    Raises:
        VariantError: For unknown variant names
    """
    return FumeNet(variant, seed=seed, dtype=dtype)
