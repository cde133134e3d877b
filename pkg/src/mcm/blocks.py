"""Bidirectional correspondence state-space block.

Each block refines keypoint tokens in four moves: local geometry around every
current joint estimate is aggregated and multiplied into the tokens before
normalization (injection); forward and backward SSM scans over the keypoint
axis produce direction-aware features; their channel-reduced pairwise products
form an explicit joint-to-joint correspondence map that mixes the value
tokens; a sigmoid gate computed from a second local aggregation blends the
mixed tokens with local geometry before the linear coordinate head (filtering).

Ablation wiring, selected per block by flags:
  ssm_type="correspondence"  full map-based mixing (the contribution)
  ssm_type="standard"        single forward scan, no correspondence map;
                             mixing degrades to an elementwise gate U * V
  ssm_type="none"            no sequence model at all; the block reduces to
                             local-token regression
  local_inject / local_filter  toggle the two local-geometry paths
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import SuperPointSet
from .errors import ContractError
from .points import NeighborIndex, PointCloud, SetConv, knn
from .ssm import SSMLayer
from .tensor import Module, Parameter, Tensor
from .tokens import KeypointState

SSM_TYPES = ("correspondence", "standard", "none")


@dataclass
class CorrespondenceMap:
    """Pairwise joint-correlation matrix; not normalized, not stochastic."""

    values: Tensor  # [J x J]


def update_tokens(m: CorrespondenceMap, v: Tensor) -> Tensor:
    """Mix value tokens across keypoints: row i gathers sum_j M[i,j] V[j]."""
    return T.matmul(m.values, v)


class CorrespondenceBlock(Module):
    def __init__(self, name: str, token_dim: int, sp_feat_dim: int,
                 coord_head: Parameter, state_dim: int = 16, k_local: int = 16,
                 ssm_type: str = "correspondence", local_inject: bool = True,
                 local_filter: bool = True, corr_full: bool = False,
                 gated_tokens: bool = False, residual: bool = False,
                 seed: int = 0):
        if ssm_type not in SSM_TYPES:
            raise ContractError(f"ssm_type must be one of {SSM_TYPES}")
        c = token_dim
        self.token_dim = c
        self.k_local = k_local
        self.ssm_type = ssm_type
        self.local_inject = local_inject
        self.local_filter = local_filter
        self.corr_full = corr_full
        # pass the gated blend (not the raw mixed tokens) to the next stage
        self.gated_tokens = gated_tokens
        # optional skip connection across the mixing step (ablation variant)
        self.residual = residual
        self.coord_head = coord_head

        def mk(suffix, shape, scheme):
            return Parameter(f"{name}.{suffix}", shape, scheme,
                             T.param_seed(seed, f"{name}.{suffix}"))

        proj = f"normal:{1.0 / np.sqrt(c)}"
        self.ln_gain = mk("ln_gain", (c,), "ones")
        self.ln_bias = mk("ln_bias", (c,), "zeros")
        self.value_proj = mk("value_proj", (c, c), proj)
        self.fwd_proj = mk("fwd_proj", (c, c), proj)
        self.bwd_proj = mk("bwd_proj", (c, c), proj)
        self.ssm_fwd = SSMLayer(f"{name}.ssm_fwd", c, state_dim,
                                seed=T.param_seed(seed, f"{name}.ssm_fwd"))
        self.ssm_bwd = SSMLayer(f"{name}.ssm_bwd", c, state_dim,
                                seed=T.param_seed(seed, f"{name}.ssm_bwd"))
        self.fwd_mix = mk("fwd_mix", (c, c), proj)
        self.bwd_mix = mk("bwd_mix", (c, c), proj)
        if corr_full:
            self.corr_weights = mk("corr_weights", (c, c), proj)
        else:
            self.corr_weights = mk("corr_weights", (c,), f"constant:{1.0 / c}")
        local_in = 3 + c + sp_feat_dim
        self.inject_conv = SetConv(f"{name}.inject_conv", local_in, [c],
                                   seed=T.param_seed(seed, f"{name}.inject_conv"))
        self.filter_conv = SetConv(f"{name}.filter_conv", local_in, [c],
                                   seed=T.param_seed(seed, f"{name}.filter_conv"))

    # -- individual stages (exposed for tests and ablation probes) -----------

    def neighborhoods(self, positions, sp: SuperPointSet) -> NeighborIndex:
        """k nearest super points per joint; shared by inject and filter."""
        pos = positions.data if isinstance(positions, Tensor) else np.asarray(positions)
        return knn(pos, PointCloud(sp.coords), k=min(self.k_local, len(sp)))

    def local_tokens(self, positions, tokens, sp: SuperPointSet,
                     neighbors: NeighborIndex | None = None,
                     which: str = "inject") -> Tensor:
        """Aggregate [p - joint | token | super feats] around each joint."""
        if neighbors is None:
            neighbors = self.neighborhoods(positions, sp)
        conv = self.inject_conv if which == "inject" else self.filter_conv
        return conv(positions, neighbors, sp.coords,
                    source_feats=sp.feats, center_feats=tokens)

    def inject_normalize(self, x_prev: Tensor, x_loc: Tensor) -> Tensor:
        """Multiplicative local injection, then per-row layer norm."""
        return T.layer_norm(T.mul(x_prev, x_loc),
                            self.ln_gain.value, self.ln_bias.value)

    def normalize(self, x_prev: Tensor) -> Tensor:
        return T.layer_norm(x_prev, self.ln_gain.value, self.ln_bias.value)

    def branch_projections(self, x_norm: Tensor):
        """Value, forward and (axis-flipped) backward projections."""
        v = T.gelu(T.matmul(x_norm, self.value_proj.value))
        x_f = T.gelu(T.matmul(x_norm, self.fwd_proj.value))
        x_b = T.gelu(T.matmul(T.flip0(x_norm), self.bwd_proj.value))
        return v, x_f, x_b

    def bidirectional_ssm(self, x_f: Tensor, x_b: Tensor):
        u_f = T.matmul(self.ssm_fwd(x_f), self.fwd_mix.value)
        u_b = T.matmul(self.ssm_bwd(x_b), self.bwd_mix.value)
        return u_f, u_b

    def correspondence_map(self, u_f: Tensor, u_b: Tensor) -> CorrespondenceMap:
        """Channel-reduced pairwise products of forward and re-ordered
        backward features; entry (i, j) fuses both scan directions."""
        rev = T.flip0(u_b)
        if self.corr_full:
            values = T.matmul(T.matmul(u_f, self.corr_weights.value), T.transpose(rev))
        else:
            values = T.matmul(T.mul(u_f, self.corr_weights.value), T.transpose(rev))
        return CorrespondenceMap(values=values)

    def gated_regress(self, x_k: Tensor, positions_prev, sp: SuperPointSet,
                      neighbors: NeighborIndex | None = None):
        """Sigmoid-gated blend of mixed tokens and fresh local tokens, then
        the linear coordinate head.  Returns (positions, gate, blended)."""
        x_loc2 = self.local_tokens(positions_prev, x_k, sp, neighbors,
                                   which="filter")
        gate = T.sigmoid(x_loc2)
        blended = T.add(T.mul(gate, x_k),
                        T.mul(T.sub(1.0, gate), x_loc2))
        return T.matmul(blended, self.coord_head.value), gate, blended

    # -- composition -----------------------------------------------------------

    def forward(self, state: KeypointState, sp: SuperPointSet,
                return_extras: bool = False):
        """One refinement stage: consumes stage k-1, emits stage k."""
        neighbors = self.neighborhoods(state.positions, sp)

        if self.ssm_type == "none":
            # local-token regression only
            x_k = self.local_tokens(state.positions, state.tokens, sp, neighbors)
        else:
            if self.local_inject:
                x_loc = self.local_tokens(state.positions, state.tokens, sp,
                                          neighbors)
                x_norm = self.inject_normalize(state.tokens, x_loc)
            else:
                x_norm = self.normalize(state.tokens)
            v, x_f, x_b = self.branch_projections(x_norm)
            if self.ssm_type == "correspondence":
                u_f, u_b = self.bidirectional_ssm(x_f, x_b)
                corr = self.correspondence_map(u_f, u_b)
                x_k = update_tokens(corr, v)
            else:  # standard: single scan, elementwise gate instead of a map
                u_f = T.matmul(self.ssm_fwd(x_f), self.fwd_mix.value)
                x_k = T.mul(u_f, v)
            if self.residual:
                x_k = T.add(x_k, state.tokens)

        gate = None
        next_tokens = x_k
        if self.local_filter:
            positions, gate, blended = self.gated_regress(x_k, state.positions,
                                                          sp, neighbors)
            if self.gated_tokens:
                next_tokens = blended
        else:
            positions = T.matmul(x_k, self.coord_head.value)

        next_state = KeypointState(tokens=next_tokens, positions=positions,
                                   stage=state.stage + 1)
        return (next_state, gate) if return_extras else next_state

    __call__ = forward
