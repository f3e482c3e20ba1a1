"""Hypergraph layers as compositions of two learned multiset functions.

One layer performs a node->edge aggregation followed by an edge->node
aggregation.  Both halves are multiset functions: they see the rows that
belong to one hyperedge (or to one node's incident edges) as an unordered
collection.  Fixed pools (sum / mean / product / weighted sum) reproduce
classical propagation rules; the learned pools wrap the aggregation in
MLPs (deep-sets style) or in seeded multihead attention with layer norm
(set-transformer style).

Aggregations run over a flat incidence-pair layout: rows are gathered
from the source side and reduced per segment.  Empty segments (isolated
nodes) produce zero rows.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .hypergraph import Hypergraph, incidence_pairs
from .nn import MlpSpec


class EmptyMultisetError(ValueError):
    pass


class PerAggregatorGuardError(ValueError):
    """Raised when the per-pair layer variant would materialize too many
    hidden states; it exists for small-instance analysis only."""


PER_AGGREGATOR_PAIR_GUARD = 200_000


def _segment_sizes(seg: np.ndarray, num: int) -> np.ndarray:
    sizes = np.zeros(num)
    np.add.at(sizes, seg, 1.0)
    return sizes


def _nonempty_mask(seg: np.ndarray, num: int) -> np.ndarray:
    return (_segment_sizes(seg, num) > 0).astype(np.float64).reshape(-1, 1)


class MultisetFunction:
    """Base interface: a permutation-invariant reduction from the rows of
    each segment to one output row per segment."""

    def out_dim(self, in_dim: int) -> int:
        return in_dim

    def init_params(
        self, rng: np.random.Generator, in_dim: int, prefix: str
    ) -> Dict[str, Tensor]:
        return {}

    def aggregate(
        self,
        params: Dict[str, Tensor],
        src: Tensor,
        pair_src: np.ndarray,
        pair_seg: np.ndarray,
        num_segments: int,
        prefix: str,
    ) -> Tensor:
        raise NotImplementedError

    def __call__(self, params: Dict[str, Tensor], rows, prefix: str = "f") -> Tensor:
        """Evaluate on a single multiset given as a row matrix."""
        rows = rows if isinstance(rows, Tensor) else Tensor(rows)
        if rows.shape[0] == 0:
            raise EmptyMultisetError("multiset function applied to an empty multiset")
        n = rows.shape[0]
        return self.aggregate(
            params, rows, np.arange(n), np.zeros(n, dtype=np.int64), 1, prefix
        )


class SumPool(MultisetFunction):
    def aggregate(self, params, src, pair_src, pair_seg, num_segments, prefix):
        return ad.segment_sum(ad.gather_rows(src, pair_src), pair_seg, num_segments)


class MeanPool(MultisetFunction):
    def aggregate(self, params, src, pair_src, pair_seg, num_segments, prefix):
        total = ad.segment_sum(ad.gather_rows(src, pair_src), pair_seg, num_segments)
        sizes = np.maximum(_segment_sizes(pair_seg, num_segments), 1.0)
        return ad.mul(total, ad.constant(1.0 / sizes.reshape(-1, 1)))


class ProductPool(MultisetFunction):
    """Columnwise product over each segment, optionally scaled by
    (multiset cardinality - 1); empty segments give zero rows."""

    def __init__(self, scale_by_cardinality_minus_one: bool = False):
        self.scale_by_cardinality_minus_one = scale_by_cardinality_minus_one

    def aggregate(self, params, src, pair_src, pair_seg, num_segments, prefix):
        prod = ad.segment_prod(ad.gather_rows(src, pair_src), pair_seg, num_segments)
        scale = _nonempty_mask(pair_seg, num_segments)
        if self.scale_by_cardinality_minus_one:
            scale = scale * (_segment_sizes(pair_seg, num_segments).reshape(-1, 1) - 1.0)
        return ad.mul(prod, ad.constant(scale))


class WeightedSumPool(MultisetFunction):
    """Sum with fixed rule-derived weights: one weight per incidence pair
    and an optional per-segment rescale applied afterwards."""

    def __init__(
        self,
        pair_weights: np.ndarray,
        segment_scale: Optional[np.ndarray] = None,
    ):
        self.pair_weights = np.asarray(pair_weights, dtype=np.float64).reshape(-1, 1)
        self.segment_scale = (
            None
            if segment_scale is None
            else np.asarray(segment_scale, dtype=np.float64).reshape(-1, 1)
        )

    def aggregate(self, params, src, pair_src, pair_seg, num_segments, prefix):
        rows = ad.mul(ad.gather_rows(src, pair_src), ad.constant(self.pair_weights))
        out = ad.segment_sum(rows, pair_seg, num_segments)
        if self.segment_scale is not None:
            out = ad.mul(out, ad.constant(self.segment_scale))
        return out


class DeepSetsPool(MultisetFunction):
    """Row-wise MLP, segment sum, then a second MLP on the pooled row.
    With both MLPs set to identity this is exactly :class:`SumPool`."""

    def __init__(self, inner: MlpSpec, outer: MlpSpec):
        if inner.out_dim != outer.in_dim:
            raise ValueError(
                f"inner output width {inner.out_dim} != outer input width {outer.in_dim}"
            )
        self.inner = inner
        self.outer = outer

    def out_dim(self, in_dim):
        return self.outer.out_dim

    def init_params(self, rng, in_dim, prefix):
        if in_dim != self.inner.in_dim:
            raise ValueError(f"pool expects {self.inner.in_dim} columns, got {in_dim}")
        params = nn.init_mlp_params(self.inner, rng, f"{prefix}.inner")
        params.update(nn.init_mlp_params(self.outer, rng, f"{prefix}.outer"))
        return params

    def aggregate(self, params, src, pair_src, pair_seg, num_segments, prefix):
        h = nn.mlp_forward(self.inner, params, src, f"{prefix}.inner")
        pooled = ad.segment_sum(ad.gather_rows(h, pair_src), pair_seg, num_segments)
        out = nn.mlp_forward(self.outer, params, pooled, f"{prefix}.outer")
        return ad.mul(out, ad.constant(_nonempty_mask(pair_seg, num_segments)))


class SetTransformerPool(MultisetFunction):
    """Seeded multihead attention over each segment with two residual +
    layer-norm stages.

    Per head, key and value maps are row-wise MLPs (one-layer and
    bias-free by default, which makes them plain linear projections);
    the attention query is a learnable seed row, and the attention
    weights are a softmax over the segment.  Head outputs are
    concatenated to ``heads * head_dim`` columns.
    """

    def __init__(
        self,
        heads: int,
        head_dim: int,
        key_widths: Optional[tuple] = None,
        value_widths: Optional[tuple] = None,
        post_widths: Optional[tuple] = None,
        eps: float = 1e-5,
    ):
        if heads < 1 or head_dim < 1:
            raise ValueError("heads and head_dim must be positive")
        self.heads = heads
        self.head_dim = head_dim
        self.hidden = heads * head_dim
        self.key_widths = key_widths
        self.value_widths = value_widths
        self.post_widths = post_widths or (self.hidden, self.hidden, self.hidden)
        self.eps = eps

    def out_dim(self, in_dim):
        return self.hidden

    def _specs(self, in_dim):
        key = MlpSpec(self.key_widths or (in_dim, self.head_dim), bias=False)
        value = MlpSpec(self.value_widths or (in_dim, self.head_dim), bias=False)
        post = MlpSpec(self.post_widths)
        return key, value, post

    def init_params(self, rng, in_dim, prefix):
        key, value, post = self._specs(in_dim)
        params: Dict[str, Tensor] = {}
        # seed query row, one slice per head
        params[f"{prefix}.seed"] = ad.parameter(
            rng.normal(0.0, 1.0 / np.sqrt(self.hidden), size=(1, self.hidden))
        )
        for i in range(self.heads):
            params.update(nn.init_mlp_params(key, rng, f"{prefix}.key{i}"))
            params.update(nn.init_mlp_params(value, rng, f"{prefix}.value{i}"))
        for stage in ("ln1", "ln2"):
            params[f"{prefix}.{stage}.gain"] = ad.parameter(np.ones((1, self.hidden)))
            params[f"{prefix}.{stage}.bias"] = ad.parameter(np.zeros((1, self.hidden)))
        params.update(nn.init_mlp_params(post, rng, f"{prefix}.post"))
        return params

    def aggregate(self, params, src, pair_src, pair_seg, num_segments, prefix):
        key, value, post = self._specs(src.shape[1])
        seed = params[f"{prefix}.seed"]
        head_outputs = []
        for i in range(self.heads):
            k = nn.mlp_forward(key, params, src, f"{prefix}.key{i}")
            v = nn.mlp_forward(value, params, src, f"{prefix}.value{i}")
            lo, hi = i * self.head_dim, (i + 1) * self.head_dim
            seed_slice = ad.slice_cols(seed, lo, hi)
            logits = ad.row_sum(ad.mul(ad.gather_rows(k, pair_src), seed_slice))
            weights = ad.segment_softmax(logits, pair_seg, num_segments)
            weighted = ad.mul(ad.gather_rows(v, pair_src), weights)
            head_outputs.append(ad.segment_sum(weighted, pair_seg, num_segments))
        mh = head_outputs[0] if self.heads == 1 else ad.concat_cols(head_outputs)
        y = nn.layer_norm(
            ad.add(seed, mh),
            params[f"{prefix}.ln1.gain"],
            params[f"{prefix}.ln1.bias"],
            eps=self.eps,
        )
        out = nn.layer_norm(
            ad.add(y, nn.mlp_forward(post, params, y, f"{prefix}.post")),
            params[f"{prefix}.ln2.gain"],
            params[f"{prefix}.ln2.bias"],
            eps=self.eps,
        )
        return ad.mul(out, ad.constant(_nonempty_mask(pair_seg, num_segments)))


_KINDS = {
    "sum": SumPool,
    "mean": MeanPool,
    "product": ProductPool,
    "weighted_sum": WeightedSumPool,
    "deepsets": DeepSetsPool,
    "settransformer": SetTransformerPool,
}


def multiset_function(kind: str, **kwargs) -> MultisetFunction:
    """Factory mapping config names to pool classes."""
    if kind not in _KINDS:
        raise ValueError(f"unknown multiset function kind {kind!r}")
    return _KINDS[kind](**kwargs)


class AllSetLayer:
    """One full node->edge->node propagation step.

    ``variant="shared"`` keeps a single hidden state per hyperedge (the
    production path).  ``variant="per_aggregator"`` materializes one
    hidden state per (edge, member) pair with the aggregating node
    excluded from its own multiset; it supports only the fixed pools and
    is guarded to small instances, since it exists for analysis.

    The second arguments of both halves (previous edge / node states)
    are dropped by default; ``use_second_argument=True`` concatenates
    them to the aggregated output when provided.
    """

    def __init__(
        self,
        v2e: MultisetFunction,
        e2v: MultisetFunction,
        variant: str = "shared",
        use_second_argument: bool = False,
    ):
        if variant not in ("shared", "per_aggregator"):
            raise ValueError(f"unknown variant {variant!r}")
        if variant == "per_aggregator" and not isinstance(
            v2e, (SumPool, MeanPool, ProductPool)
        ):
            raise ValueError("per-pair variant supports only fixed pools")
        self.v2e = v2e
        self.e2v = e2v
        self.variant = variant
        self.use_second_argument = use_second_argument

    def init_params(
        self, rng: np.random.Generator, in_dim: int, z_prev_dim: int = 0,
        prefix: str = "layer",
    ) -> tuple:
        """Returns (params, out_dim); dims account for the optional
        second-argument concatenation."""
        params = self.v2e.init_params(rng, in_dim, f"{prefix}.v2e")
        z_dim = self.v2e.out_dim(in_dim)
        if self.use_second_argument:
            z_dim += z_prev_dim
        params.update(self.e2v.init_params(rng, z_dim, f"{prefix}.e2v"))
        out_dim = self.e2v.out_dim(z_dim)
        if self.use_second_argument:
            out_dim += in_dim
        return params, out_dim

    def v2e_forward(
        self,
        params: Dict[str, Tensor],
        hg: Hypergraph,
        x,
        z_prev=None,
        prefix: str = "layer",
    ) -> Tensor:
        """Hidden state per hyperedge from the multiset of member rows."""
        xt = x if isinstance(x, Tensor) else Tensor(x)
        if xt.shape[0] != hg.n:
            raise ad.ShapeMismatchError(
                f"features have {xt.shape[0]} rows for {hg.n} nodes"
            )
        pn, pe = incidence_pairs(hg)
        z = self.v2e.aggregate(params, xt, pn, pe, hg.num_edges, f"{prefix}.v2e")
        if self.use_second_argument and z_prev is not None:
            zp = z_prev if isinstance(z_prev, Tensor) else Tensor(z_prev)
            if zp.shape[0] != hg.num_edges:
                raise ad.ShapeMismatchError(
                    f"previous edge state has {zp.shape[0]} rows for "
                    f"{hg.num_edges} edges"
                )
            z = ad.concat_cols([z, zp])
        return z

    def e2v_forward(
        self,
        params: Dict[str, Tensor],
        hg: Hypergraph,
        z,
        x_prev=None,
        prefix: str = "layer",
    ) -> Tensor:
        """Node state from the multiset of incident-edge rows; isolated
        nodes yield zero rows (or their previous state when the second
        argument is enabled)."""
        zt = z if isinstance(z, Tensor) else Tensor(z)
        if zt.shape[0] != hg.num_edges:
            raise ad.ShapeMismatchError(
                f"edge states have {zt.shape[0]} rows for {hg.num_edges} edges"
            )
        pn, pe = incidence_pairs(hg)
        x_out = self.e2v.aggregate(params, zt, pe, pn, hg.n, f"{prefix}.e2v")
        if self.use_second_argument and x_prev is not None:
            xp = x_prev if isinstance(x_prev, Tensor) else Tensor(x_prev)
            x_out = ad.concat_cols([x_out, xp])
        return x_out

    def forward(
        self,
        params: Dict[str, Tensor],
        hg: Hypergraph,
        x,
        z_prev=None,
        prefix: str = "layer",
    ) -> tuple:
        """Full propagation step; returns (edge_state, node_state)."""
        if self.variant == "per_aggregator":
            xv = x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
            out = per_aggregator_propagate(
                hg,
                xv,
                self.v2e,
                mean_e2v=isinstance(self.e2v, MeanPool),
            )
            return None, Tensor(out)
        z = self.v2e_forward(params, hg, x, z_prev=z_prev, prefix=prefix)
        x_out = self.e2v_forward(
            params, hg, z, x_prev=x if self.use_second_argument else None,
            prefix=prefix,
        )
        return z, x_out


def per_aggregator_propagate(
    hg: Hypergraph,
    x: np.ndarray,
    v2e: MultisetFunction,
    mean_e2v: bool = False,
) -> np.ndarray:
    """Pair-level propagation: for every (edge, member) pair, aggregate
    the other members' rows, then sum (or average) those pair states at
    each node.  Small instances only."""
    pair_count = int(hg.edge_sizes().sum())
    if pair_count * max(x.shape[1], 1) > PER_AGGREGATOR_PAIR_GUARD:
        raise PerAggregatorGuardError(
            f"{pair_count} pairs x {x.shape[1]} features exceeds the guard"
        )
    out = np.zeros_like(x)
    counts = hg.degrees().astype(np.float64)
    for members in hg.edges:
        idx = list(members)
        rows = x[idx]
        for i, v in enumerate(idx):
            others = np.delete(np.arange(len(idx)), i)
            if isinstance(v2e, SumPool):
                state = rows[others].sum(axis=0)
            elif isinstance(v2e, MeanPool):
                state = rows[others].mean(axis=0) if len(others) else np.zeros(x.shape[1])
            elif isinstance(v2e, ProductPool):
                state = rows[others].prod(axis=0)
                if v2e.scale_by_cardinality_minus_one:
                    state = state * (len(idx) - 1)
            else:  # pragma: no cover - guarded in AllSetLayer.__init__
                raise ValueError("unsupported pool for the per-pair variant")
            out[v] += state
    if mean_e2v:
        out /= np.maximum(counts, 1.0).reshape(-1, 1)
    return out


def alldeepsets_f(
    pool: DeepSetsPool, params: Dict[str, Tensor], rows, prefix: str = "f"
) -> Tensor:
    """Deep-sets evaluation of a single multiset (one output row)."""
    return pool(params, rows, prefix=prefix)


def allsettransformer_f(
    pool: SetTransformerPool, params: Dict[str, Tensor], rows, prefix: str = "f"
) -> Tensor:
    """Attention-pool evaluation of a single multiset (one output row)."""
    return pool(params, rows, prefix=prefix)


class AllSetNetwork:
    """Input projection, a stack of propagation layers, and a classifier
    head (a single linear layer by default)."""

    def __init__(
        self,
        in_dim: int,
        num_classes: int,
        layers: list,
        input_proj: Optional[MlpSpec] = None,
        head: Optional[MlpSpec] = None,
        dropout: float = 0.0,
    ):
        if not layers:
            raise ValueError("at least one propagation layer is required")
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.layers = list(layers)
        self.input_proj = input_proj
        self.dropout = float(dropout)
        dim = in_dim if input_proj is None else input_proj.out_dim
        self._layer_in_dims = []
        for layer in self.layers:
            self._layer_in_dims.append(dim)
            z_dim = layer.v2e.out_dim(dim)
            dim = layer.e2v.out_dim(z_dim)
        self.head = head or MlpSpec((dim, num_classes), activation="identity")
        if self.head.in_dim != dim or self.head.out_dim != num_classes:
            raise ValueError(
                f"head must map {dim} -> {num_classes}, got {self.head.widths}"
            )

    def init_params(self, rng: np.random.Generator) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        if self.input_proj is not None:
            params.update(nn.init_mlp_params(self.input_proj, rng, "proj"))
        for li, layer in enumerate(self.layers):
            layer_params, _ = layer.init_params(
                rng, self._layer_in_dims[li], prefix=f"layer{li}"
            )
            params.update(layer_params)
        params.update(nn.init_mlp_params(self.head, rng, "head"))
        return params

    def forward(
        self,
        params: Dict[str, Tensor],
        hg: Hypergraph,
        x,
        z0=None,
        rng: Optional[np.random.Generator] = None,
        training: bool = False,
    ) -> Tensor:
        """Logits with one row per node and one column per class."""
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.shape[1] != self.in_dim:
            raise ad.ShapeMismatchError(
                f"network expects {self.in_dim} feature columns, got {h.shape[1]}"
            )
        drop = self.dropout if training else 0.0
        if self.input_proj is not None:
            h = nn.mlp_forward(self.input_proj, params, h, "proj")
            if drop > 0:
                h = ad.dropout(h, drop, rng)
        z = z0
        for li, layer in enumerate(self.layers):
            z, h = layer.forward(params, hg, h, z_prev=z, prefix=f"layer{li}")
            if drop > 0:
                h = ad.dropout(h, drop, rng)
        return nn.mlp_forward(self.head, params, h, "head")
