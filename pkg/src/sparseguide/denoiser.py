"""Token-transformer velocity model with structural sparsity.

Three modes share one trunk and one parameter set:

  dense  — every token through every layer;
  mask   — dropped tokens' embeddings are replaced by a learned vector for
           the whole forward pass, destroying their instance content;
  route  — dropped tokens skip the layers in [route_start, route_end): they
           are excluded from attention inside the span and their span-entry
           activations are reinserted unchanged where the span ends.

Blocks are pre-norm (RMS) with rotary positions on the tokens' original
indices, per-block scale/shift/gate modulation from the time+class
embedding, and a gelu MLP. Modulation and output projections start at zero
so the trunk is the identity at initialization.

2-d point data is lifted to a fixed number of learned pseudo-tokens by a
linear encoder; each token predicts the sample's velocity and the readout
averages them. Tiny images are patchified and each token predicts its own
patch velocity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DegenerateMaskError, DimensionError
from .masks import SparsityMask
from .rng import INIT, substream

NEG_BIAS = -1e30  # additive attention bias; exp() underflows to exactly 0.0


@dataclass(frozen=True)
class RouteSpec:
    """Layer span [start_layer, end_layer) that dropped tokens bypass."""

    start_layer: int
    end_layer: int

    def validate(self, num_layers: int) -> None:
        if not 0 <= self.start_layer < self.end_layer < num_layers:
            raise ConfigurationError(
                f"route {self.start_layer}->{self.end_layer} invalid for "
                f"{num_layers} layers (need 0 <= i < j < B)"
            )


@dataclass(frozen=True)
class Condition:
    """Class condition or the null condition."""

    kind: str = "null"  # "class" | "null"
    label: int | None = None

    def __post_init__(self):
        if self.kind not in ("class", "null"):
            raise ConfigurationError(f"unknown condition kind {self.kind!r}")
        if self.kind == "class" and (self.label is None or self.label < 0):
            raise ConfigurationError("class condition requires a non-negative label")


NULL_CONDITION = Condition(kind="null")


@dataclass
class TokenSequence:
    """A batch of token vectors with their original positional indices."""

    tokens: object  # Tensor or ndarray, (T, d) or (B, T, d)
    positions: np.ndarray
    cond: Condition = NULL_CONDITION

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64)
        t_axis = self.tokens.shape[-2]
        if self.positions.shape != (t_axis,):
            raise DimensionError(
                f"positions length {self.positions.shape} != token rows {t_axis}"
            )
        if len(np.unique(self.positions)) != len(self.positions):
            raise DimensionError("positions must be distinct")


@dataclass(frozen=True)
class DenoiserConfig:
    num_layers: int = 6
    model_dim: int = 64
    num_heads: int = 4
    mlp_ratio: int = 4
    data_kind: str = "points2d"  # "points2d" | "image"
    token_count: int = 4  # pseudo-tokens (points2d mode)
    grid_size: int = 8  # image edge length (image mode)
    patch_size: int = 2
    num_classes: int = 8
    sparsity_mode: str = "dense"  # "dense" | "mask" | "route"
    route: RouteSpec = field(default_factory=lambda: RouteSpec(1, 5))
    cond_mode: str = "modulate"
    rope_theta: float = 10000.0

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ConfigurationError("model_dim must be divisible by num_heads")
        if (self.model_dim // self.num_heads) % 2 != 0:
            raise ConfigurationError("head dim must be even for rotary pairs")
        if self.data_kind not in ("points2d", "image"):
            raise ConfigurationError(f"unknown data_kind {self.data_kind!r}")
        if self.sparsity_mode not in ("dense", "mask", "route"):
            raise ConfigurationError(f"unknown sparsity_mode {self.sparsity_mode!r}")
        if self.cond_mode != "modulate":
            raise ConfigurationError(f"unsupported cond_mode {self.cond_mode!r}")
        if self.data_kind == "image" and self.grid_size % self.patch_size != 0:
            raise ConfigurationError("grid_size must be divisible by patch_size")
        if self.sparsity_mode == "route":
            self.route.validate(self.num_layers)

    @property
    def tokens(self) -> int:
        if self.data_kind == "points2d":
            return self.token_count
        return (self.grid_size // self.patch_size) ** 2

    @property
    def data_dim(self) -> int:
        if self.data_kind == "points2d":
            return 2
        return self.grid_size * self.grid_size

    @property
    def token_out_dim(self) -> int:
        if self.data_kind == "points2d":
            return 2
        return self.patch_size * self.patch_size

    @property
    def token_in_dim(self) -> int:
        if self.data_kind == "points2d":
            return 2
        return self.patch_size * self.patch_size

    @property
    def null_label(self) -> int:
        return self.num_classes

    def to_flat(self) -> dict[str, str]:
        return {
            "num_layers": str(self.num_layers),
            "model_dim": str(self.model_dim),
            "num_heads": str(self.num_heads),
            "mlp_ratio": str(self.mlp_ratio),
            "data_kind": self.data_kind,
            "token_count": str(self.token_count),
            "grid_size": str(self.grid_size),
            "patch_size": str(self.patch_size),
            "num_classes": str(self.num_classes),
            "sparsity_mode": self.sparsity_mode,
            "route_start": str(self.route.start_layer),
            "route_end": str(self.route.end_layer),
            "cond_mode": self.cond_mode,
            "rope_theta": repr(self.rope_theta),
        }

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "DenoiserConfig":
        return cls(
            num_layers=int(flat["num_layers"]),
            model_dim=int(flat["model_dim"]),
            num_heads=int(flat["num_heads"]),
            mlp_ratio=int(flat["mlp_ratio"]),
            data_kind=flat["data_kind"],
            token_count=int(flat["token_count"]),
            grid_size=int(flat["grid_size"]),
            patch_size=int(flat["patch_size"]),
            num_classes=int(flat["num_classes"]),
            sparsity_mode=flat["sparsity_mode"],
            route=RouteSpec(int(flat["route_start"]), int(flat["route_end"])),
            cond_mode=flat["cond_mode"],
            rope_theta=float(flat["rope_theta"]),
        )


class Denoiser:
    """The velocity model. Parameters live in a flat name->Tensor dict."""

    def __init__(self, config: DenoiserConfig, seed: int = 0, params=None):
        self.config = config
        if params is not None:
            self.params = params
        else:
            self.params = self._init_params(substream(seed, INIT))
        self._rope_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    # ------------------------------------------------------------------
    # parameters

    def _init_params(self, rng: np.random.Generator) -> dict[str, ad.Tensor]:
        cfg = self.config
        d = cfg.model_dim
        t_tokens = cfg.tokens

        def normal(shape, std):
            return ad.Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)

        def zeros(shape):
            return ad.Tensor(np.zeros(shape), requires_grad=True)

        def ones(shape):
            return ad.Tensor(np.ones(shape), requires_grad=True)

        p: dict[str, ad.Tensor] = {}
        if cfg.data_kind == "points2d":
            p["enc_w"] = normal((cfg.token_in_dim, t_tokens * d), 1.0 / math.sqrt(cfg.token_in_dim))
            p["enc_b"] = normal((t_tokens * d,), 0.02)
        else:
            p["enc_w"] = normal((cfg.token_in_dim, d), 1.0 / math.sqrt(cfg.token_in_dim))
            p["enc_b"] = zeros((d,))
        p["cond_table"] = normal((cfg.num_classes + 1, d), 0.02)
        p["t_w1"] = normal((d, d), 1.0 / math.sqrt(d))
        p["t_b1"] = zeros((d,))
        p["t_w2"] = normal((d, d), 1.0 / math.sqrt(d))
        p["t_b2"] = zeros((d,))
        p["e_mask"] = normal((d,), 0.02)
        for b in range(cfg.num_layers):
            pre = f"block{b}_"
            p[pre + "qkv_w"] = normal((d, 3 * d), 1.0 / math.sqrt(d))
            p[pre + "out_w"] = normal((d, d), 1.0 / math.sqrt(d))
            p[pre + "mlp_w1"] = normal((d, cfg.mlp_ratio * d), 1.0 / math.sqrt(d))
            p[pre + "mlp_w2"] = normal(
                (cfg.mlp_ratio * d, d), 1.0 / math.sqrt(cfg.mlp_ratio * d)
            )
            p[pre + "norm1_gain"] = ones((d,))
            p[pre + "norm2_gain"] = ones((d,))
            p[pre + "ada_w"] = zeros((d, 6 * d))
            p[pre + "ada_b"] = zeros((6 * d,))
        p["final_norm_gain"] = ones((d,))
        p["final_ada_w"] = zeros((d, 2 * d))
        p["final_ada_b"] = zeros((2 * d,))
        p["head_w"] = zeros((d, cfg.token_out_dim))
        p["head_b"] = zeros((cfg.token_out_dim,))
        return p

    def with_mode(self, mode: str) -> "Denoiser":
        """Same parameters under a different sparsity mode."""
        cfg = replace(self.config, sparsity_mode=mode)
        return Denoiser(cfg, params=self.params)

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    # ------------------------------------------------------------------
    # embeddings

    def _rope_tables(self, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        key = (positions.tobytes(), self.config.rope_theta)
        if key not in self._rope_cache:
            dh = self.config.model_dim // self.config.num_heads
            half = dh // 2
            inv_freq = self.config.rope_theta ** (
                -np.arange(half, dtype=np.float64) * 2.0 / dh
            )
            angles = positions[:, None].astype(np.float64) * inv_freq[None, :]
            self._rope_cache[key] = (np.cos(angles), np.sin(angles))
        return self._rope_cache[key]

    def embed_condition(self, cond: Condition) -> ad.Tensor:
        """Row of the class table; the null condition has its own row."""
        idx = self._cond_index(cond)
        return ad.take_rows(self.params["cond_table"], np.array([idx]))

    def _cond_index(self, cond: Condition) -> int:
        if cond.kind == "null":
            return self.config.null_label
        if cond.label >= self.config.num_classes:
            raise ConfigurationError(
                f"label {cond.label} out of range [0, {self.config.num_classes})"
            )
        return int(cond.label)

    def _cond_indices(self, cond, batch: int) -> np.ndarray:
        if isinstance(cond, Condition):
            return np.full(batch, self._cond_index(cond), dtype=np.int64)
        idx = np.asarray(cond, dtype=np.int64)
        if idx.shape != (batch,):
            raise DimensionError(f"label array shape {idx.shape} != ({batch},)")
        if np.any(idx < 0) or np.any(idx > self.config.null_label):
            raise ConfigurationError("label index out of range")
        return idx

    def time_embedding(self, t, batch: int = 1) -> ad.Tensor:
        """Sinusoidal features of t pushed through a two-layer MLP."""
        d = self.config.model_dim
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        half = d // 2
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
        angles = t_arr[:, None] * 1000.0 * freqs[None, :]
        sincos = np.concatenate([np.cos(angles), np.sin(angles)], axis=1)
        h = _linear(ad.constant(sincos), self.params["t_w1"], self.params["t_b1"])
        h = ad.gelu(h)
        return _linear(h, self.params["t_w2"], self.params["t_b2"])

    def _cond_vector(self, t, cond_idx: np.ndarray) -> ad.Tensor:
        h = self.time_embedding(t, cond_idx.shape[0])
        c = ad.take_rows(self.params["cond_table"], cond_idx)
        return ad.add(h, c)

    # ------------------------------------------------------------------
    # data <-> tokens

    def encode(self, x_data: np.ndarray) -> ad.Tensor:
        """Lift data to (B, T, d) token embeddings."""
        cfg = self.config
        x = np.asarray(x_data, dtype=np.float64)
        if cfg.data_kind == "points2d":
            if x.ndim == 1:
                x = x[None, :]
            h = _linear(ad.constant(x), self.params["enc_w"], self.params["enc_b"])
            return ad.reshape(h, (x.shape[0], cfg.tokens, cfg.model_dim))
        patches = self.patchify(x)
        return _linear(ad.constant(patches), self.params["enc_w"], self.params["enc_b"])

    def patchify(self, x: np.ndarray) -> np.ndarray:
        cfg = self.config
        if x.ndim == 2:
            x = x[None]
        b = x.shape[0]
        g, p = cfg.grid_size, cfg.patch_size
        n = g // p
        out = x.reshape(b, n, p, n, p).transpose(0, 1, 3, 2, 4).reshape(b, n * n, p * p)
        return np.ascontiguousarray(out)

    def unpatchify(self, tok: np.ndarray) -> np.ndarray:
        cfg = self.config
        b = tok.shape[0]
        g, p = cfg.grid_size, cfg.patch_size
        n = g // p
        x = tok.reshape(b, n, n, p, p).transpose(0, 1, 3, 2, 4).reshape(b, g, g)
        return np.ascontiguousarray(x)

    def token_targets(self, v_star_data: np.ndarray) -> np.ndarray:
        """Per-token regression targets for a data-space velocity."""
        cfg = self.config
        v = np.asarray(v_star_data, dtype=np.float64)
        if cfg.data_kind == "points2d":
            return np.repeat(v[:, None, :], cfg.tokens, axis=1)
        return self.patchify(v)

    def decode_tokens(self, tok: np.ndarray) -> np.ndarray:
        """Token velocities -> data-space velocity."""
        cfg = self.config
        if cfg.data_kind == "points2d":
            return tok.mean(axis=1)
        return self.unpatchify(tok)

    # ------------------------------------------------------------------
    # forward

    def forward(self, seq: TokenSequence, t, mask: SparsityMask | None = None):
        """Spec-level forward on an embedded TokenSequence.

        Returns a TokenSequence whose rows are per-token velocities; the row
        count always equals the input row count regardless of mode and mask.
        """
        tokens = seq.tokens
        if not isinstance(tokens, ad.Tensor):
            tokens = ad.constant(tokens)
        squeeze = tokens.ndim == 2
        if squeeze:
            tokens = ad.reshape(tokens, (1,) + tokens.shape)
        batch = tokens.shape[0]
        keep = None
        if mask is not None:
            keep = np.asarray(mask.keep, dtype=bool)
            if keep.ndim == 1:
                keep = np.broadcast_to(keep, (batch, keep.shape[0])).copy()
        cond_idx = self._cond_indices(seq.cond, batch)
        out = self._trunk(tokens, t, cond_idx, keep, seq.positions)
        if squeeze:
            out = ad.reshape(out, out.shape[1:])
        return TokenSequence(tokens=out, positions=seq.positions, cond=seq.cond)

    def forward_data(self, x_data, t, cond, keep, record=None) -> ad.Tensor:
        """Encode data and run the trunk; returns per-token velocities (B, T, out)."""
        tokens = self.encode(x_data)
        batch = tokens.shape[0]
        cond_idx = self._cond_indices(cond, batch)
        positions = np.arange(self.config.tokens, dtype=np.int64)
        return self._trunk(tokens, t, cond_idx, keep, positions, record=record)

    def predict_velocity(self, x_data, t, cond, keep=None) -> np.ndarray:
        """Data-space velocity prediction without graph recording."""
        with ad.no_grad():
            tok = self.forward_data(x_data, t, cond, keep)
        return self.decode_tokens(tok.data)

    def _trunk(
        self,
        tokens: ad.Tensor,
        t,
        cond_idx: np.ndarray,
        keep: np.ndarray | None,
        positions: np.ndarray,
        record: list | None = None,
    ) -> ad.Tensor:
        cfg = self.config
        batch, t_tokens, d = tokens.shape
        mode = cfg.sparsity_mode

        if keep is not None:
            keep = np.asarray(keep, dtype=bool)
            if keep.shape != (batch, t_tokens):
                raise DimensionError(
                    f"keep shape {keep.shape} != {(batch, t_tokens)}"
                )
            if keep.all():
                keep = None  # empty drop set: all modes share the dense path

        if mode == "dense" and keep is not None:
            warnings.warn("mask supplied to a dense-mode forward; ignoring it")
            keep = None
        if mode == "route" and keep is not None and not keep.any(axis=1).all():
            raise DegenerateMaskError("routing dropped every token of a sample")

        cond_vec = self._cond_vector(t, cond_idx)
        h = tokens
        if mode == "mask" and keep is not None:
            e = ad.expand_axis(
                ad.expand_axis(self.params["e_mask"], t_tokens, 0), batch, 0
            )
            h = ad.where_rows(keep, h, e)

        route_bias = None
        if mode == "route" and keep is not None:
            bias = np.where(keep, 0.0, NEG_BIAS)[:, None, None, :]
            route_bias = np.ascontiguousarray(
                np.broadcast_to(bias, (batch, cfg.num_heads, t_tokens, t_tokens))
            )

        span = (
            range(cfg.route.start_layer, cfg.route.end_layer)
            if mode == "route" and keep is not None
            else range(0)
        )
        if record is not None:
            record.append(h.data.copy())
        for layer in range(cfg.num_layers):
            in_span = layer in span
            out = self._block(
                layer, h, cond_vec, positions, route_bias if in_span else None
            )
            if in_span:
                # dropped rows pass the span untouched (identity bypass)
                h = ad.where_rows(keep, out, h)
            else:
                h = out
            if record is not None:
                record.append(h.data.copy())

        h = ad.rmsnorm(h, self.params["final_norm_gain"])
        ada = _linear(cond_vec, self.params["final_ada_w"], self.params["final_ada_b"])
        shift = ad.slice_lastdim(ada, 0, d)
        scl = ad.slice_lastdim(ada, d, 2 * d)
        h = ad.modulate(h, scl, shift)
        return _linear(h, self.params["head_w"], self.params["head_b"])

    def attention_block(
        self,
        x: ad.Tensor,
        t_emb: ad.Tensor,
        c_emb: ad.Tensor,
        layer: int = 0,
        positions: np.ndarray | None = None,
        attn_bias: np.ndarray | None = None,
    ) -> ad.Tensor:
        """One pre-norm block driven by explicit time and condition embeddings."""
        if positions is None:
            positions = np.arange(x.shape[-2], dtype=np.int64)
        squeeze = x.ndim == 2
        if squeeze:
            x = ad.reshape(x, (1,) + x.shape)
        cond_vec = ad.add(t_emb, c_emb)
        if cond_vec.ndim == 1:
            cond_vec = ad.reshape(cond_vec, (1, cond_vec.shape[0]))
        out = self._block(layer, x, cond_vec, positions, attn_bias)
        if squeeze:
            out = ad.reshape(out, out.shape[1:])
        return out

    def _block(
        self,
        layer: int,
        h: ad.Tensor,
        cond_vec: ad.Tensor,
        positions: np.ndarray,
        attn_bias: np.ndarray | None,
    ) -> ad.Tensor:
        cfg = self.config
        p = self.params
        pre = f"block{layer}_"
        batch, t_tokens, d = h.shape
        heads = cfg.num_heads

        ada = _linear(cond_vec, p[pre + "ada_w"], p[pre + "ada_b"])
        mods = [ad.slice_lastdim(ada, k * d, (k + 1) * d) for k in range(6)]
        shift1, scale1, gate1, shift2, scale2, gate2 = mods

        u = ad.modulate(ad.rmsnorm(h, p[pre + "norm1_gain"]), scale1, shift1)
        cos, sin = self._rope_tables(np.asarray(positions, dtype=np.int64))
        attn_out = ad.fused_attention(
            u, p[pre + "qkv_w"], p[pre + "out_w"], cos, sin, attn_bias, heads
        )
        h = ad.gate_residual(h, gate1, attn_out)

        u2 = ad.modulate(ad.rmsnorm(h, p[pre + "norm2_gain"]), scale2, shift2)
        mlp = ad.matmul(ad.gelu(ad.matmul(u2, p[pre + "mlp_w1"])), p[pre + "mlp_w2"])
        return ad.gate_residual(h, gate2, mlp)


def _linear(x: ad.Tensor, w: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    out = ad.matmul(x, w)
    if out.ndim == 2:
        bias = ad.expand_axis(b, out.shape[0], 0)
    else:
        bias = ad.expand_axis(ad.expand_axis(b, out.shape[1], 0), out.shape[0], 0)
    return ad.add(out, bias)


