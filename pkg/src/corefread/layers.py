"""Neural layers: embeddings, character CNN, BiGRU, layer norm, multi-head
self-attention blocks, and the position-wise feed-forward block.

Layers create their parameters in a ParameterStore at construction and are
plain callables over batched tensors of shape (B, n, d). Dropout is inverted
(scaled at train time), so evaluation applies no rescaling. Padded positions
are controlled by masks throughout; the GRU carries its state through masked
steps so padding never leaks into real positions.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import tensor as T
from .params import ParameterStore
from .tensor import Tensor


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = 1.0 - rate
    mask = (rng.uniform(size=x.shape) < keep) / keep
    return T.mul(x, Tensor(mask))


class Linear:
    def __init__(self, store: ParameterStore, prefix: str, d_in: int, d_out: int, bias: bool = True):
        self.w = store.create(f"{prefix}.w", (d_in, d_out), init="xavier")
        self.b = store.create(f"{prefix}.b", (d_out,), init="zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.w)
        if self.b is not None:
            y = T.add(y, T.broadcast_to(self.b, y.shape))
        return y


class LayerNorm:
    """Last-axis normalization with trained gain and bias."""

    def __init__(self, store: ParameterStore, prefix: str, d: int, eps: float = 1e-5):
        self.gain = store.create(f"{prefix}.gain", (d,), init="ones")
        self.bias = store.create(f"{prefix}.bias", (d,), init="zeros")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm_op(x, self.gain, self.bias, self.eps)


class CharCNN:
    """Per-token character convolution (fixed width) with max pooling."""

    def __init__(self, store, prefix, n_chars: int, char_dim: int, filters: int, width: int = 5):
        self.table = store.create(f"{prefix}.table", (n_chars, char_dim), init="embedding")
        self.filters = store.create(f"{prefix}.filters", (width * char_dim, filters), init="xavier")
        self.fbias = store.create(f"{prefix}.fbias", (filters,), init="zeros")
        self.char_dim = char_dim
        self.n_filters = filters
        self.width = width

    def __call__(self, char_ids: np.ndarray, char_lengths: np.ndarray) -> Tensor:
        """char_ids (..., c_max) with c_max >= width; returns (..., filters)."""
        lead = char_ids.shape[:-1]
        c_max = char_ids.shape[-1]
        emb = T.gather_rows(self.table, char_ids.reshape(-1, c_max))
        out = T.conv1d_maxpool(
            emb, char_lengths.reshape(-1), self.filters, self.fbias, self.width
        )
        return T.reshape(out, lead + (self.n_filters,))


class TokenEmbedder:
    """Concatenation of a trained word vector and the character-CNN vector."""

    def __init__(self, store, prefix, n_words, word_dim, n_chars, char_dim, char_filters, width=5):
        self.words = store.create(f"{prefix}.words", (n_words, word_dim), init="embedding")
        self.char_cnn = CharCNN(store, f"{prefix}.chars", n_chars, char_dim, char_filters, width)
        self.dim = word_dim + char_filters

    def __call__(self, token_ids, char_ids, char_lengths, rate=0.0, rng=None, training=False) -> Tensor:
        w = T.gather_rows(self.words, np.asarray(token_ids))
        c = self.char_cnn(np.asarray(char_ids), np.asarray(char_lengths))
        c = dropout(c, rate, rng, training)
        return T.concat_along_axis([w, c], axis=-1)


class BiGRU:
    """Stack of bidirectional GRU layers over padded batches.

    Each layer runs an independent forward and backward pass and concatenates
    the two final hidden sequences, so output width is 2*hidden.
    """

    def __init__(self, store, prefix, d_in: int, hidden: int, layers: int = 1):
        self.layers = []
        self.hidden = hidden
        d = d_in
        for l in range(layers):
            layer = {}
            for direction in ("fwd", "bwd"):
                p = f"{prefix}.l{l}.{direction}"
                layer[direction] = {
                    "w": store.create(f"{p}.w", (d, 3 * hidden), init="small_uniform"),
                    "b": store.create(f"{p}.b", (3 * hidden,), init="zeros"),
                    "u": store.create(f"{p}.u", (hidden, 3 * hidden), init="small_uniform"),
                    "b_hn": store.create(f"{p}.b_hn", (hidden,), init="zeros"),
                }
            self.layers.append(layer)
            d = 2 * hidden

    def _direction(self, x, mask, par, reverse):
        xp = T.add(T.matmul(x, par["w"]), T.broadcast_to(par["b"], x.shape[:-1] + (par["b"].shape[0],)))
        return T.gru_sequence(xp, par["u"], par["b_hn"], mask, reverse)

    def __call__(self, x: Tensor, mask: np.ndarray, rate=0.0, rng=None, training=False) -> Tensor:
        for layer in self.layers:
            x = dropout(x, rate, rng, training)
            f = self._direction(x, mask, layer["fwd"], False)
            b = self._direction(x, mask, layer["bwd"], True)
            x = T.concat_along_axis([f, b], axis=-1)
        return x


class FeedForward:
    """Two linear maps with a ReLU between; inner width is mult * d_model."""

    def __init__(self, store, prefix, d_model: int, mult: int = 4):
        self.lin1 = Linear(store, f"{prefix}.lin1", d_model, mult * d_model)
        self.lin2 = Linear(store, f"{prefix}.lin2", mult * d_model, d_model)

    def __call__(self, x: Tensor, rate=0.0, rng=None, training=False) -> Tensor:
        h = T.relu(self.lin1(x))
        h = dropout(h, rate, rng, training)
        return self.lin2(h)


class SelfAttentionBlock:
    """Post-norm transformer block returning its per-head attention weights.

    Queries, keys, and values are projected to ``attn_dim`` total (split
    across heads); the head concatenation is projected back to d_model so the
    residual connections type-check even when attn_dim != d_model. Dropout is
    applied to the attention weights, inside the feed-forward, and on both
    residual branches.
    """

    def __init__(self, store, prefix, d_model: int, heads: int, attn_dim: int | None = None, ffn_mult: int = 4):
        attn_dim = d_model if attn_dim is None else attn_dim
        if attn_dim % heads != 0:
            raise ValueError(
                f"attention dimension {attn_dim} not divisible by {heads} heads"
            )
        self.d_model = d_model
        self.heads = heads
        self.attn_dim = attn_dim
        self.head_dim = attn_dim // heads
        self.wq = Linear(store, f"{prefix}.wq", d_model, attn_dim)
        # a key bias shifts every score in a row equally, which softmax
        # cancels exactly; the parameter would be inert
        self.wk = Linear(store, f"{prefix}.wk", d_model, attn_dim, bias=False)
        self.wv = Linear(store, f"{prefix}.wv", d_model, attn_dim)
        self.wo = Linear(store, f"{prefix}.wo", attn_dim, d_model)
        self.ln1 = LayerNorm(store, f"{prefix}.ln1", d_model)
        self.ln2 = LayerNorm(store, f"{prefix}.ln2", d_model)
        self.ffn = FeedForward(store, f"{prefix}.ffn", d_model, ffn_mult)

    def _split(self, x: Tensor, B: int, n: int) -> Tensor:
        x = T.reshape(x, (B, n, self.heads, self.head_dim))
        return T.transpose(x, (0, 2, 1, 3))  # (B, H, n, hd)

    def __call__(self, x: Tensor, mask: np.ndarray, rate=0.0, rng=None, training=False):
        """x (B, n, d_model); mask (B, 1, n, n) or (B, H, n, n), 1 = attendable.

        Returns (output, [attention per head]), each attention (B, n, n) and
        row-stochastic over unmasked columns.
        """
        B, n, _ = x.shape
        q = self._split(self.wq(x), B, n)
        k = self._split(self.wk(x), B, n)
        v = self._split(self.wv(x), B, n)
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(self.head_dim))
        full_mask = np.broadcast_to(np.asarray(mask, dtype=np.float64), scores.shape)
        attn = T.masked_softmax(scores, full_mask)
        per_head = [attn[:, h] for h in range(self.heads)]
        ctx = T.matmul(dropout(attn, rate, rng, training), v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, n, self.attn_dim))
        x = self.ln1(T.add(x, dropout(self.wo(ctx), rate, rng, training)))
        f = self.ffn(x, rate, rng, training)
        out = self.ln2(T.add(x, dropout(f, rate, rng, training)))
        return out, per_head


def sinusoid_positions(n: int, d: int) -> np.ndarray:
    """Fixed sinusoidal position signal, one row per position."""
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / d)
    out = np.empty((n, d))
    out[:, 0::2] = np.sin(angles[:, 0::2])
    out[:, 1::2] = np.cos(angles[:, 1::2])
    return out


class SelfAttentionEncoder:
    """Stack of SelfAttentionBlocks with an optional position signal."""

    def __init__(self, store, prefix, layers: int, d_model: int, heads: int,
                 attn_dim: int | None = None, ffn_mult: int = 4, position_signal: bool = True):
        self.blocks = [
            SelfAttentionBlock(store, f"{prefix}.layer{i}", d_model, heads, attn_dim, ffn_mult)
            for i in range(layers)
        ]
        self.d_model = d_model
        self.position_signal = position_signal

    def __call__(self, x: Tensor, masks, rate=0.0, rng=None, training=False):
        """masks: one (B, 1|H, n, n) array per layer, or a single array used
        for every layer. Returns (output, attention[layer][head])."""
        B, n, d = x.shape
        if self.position_signal:
            pos = Tensor(sinusoid_positions(n, d))
            x = T.add(x, T.broadcast_to(pos, (B, n, d)))
        if isinstance(masks, np.ndarray):
            masks = [masks] * len(self.blocks)
        captured = []
        for block, mask in zip(self.blocks, masks):
            x, heads = block(x, mask, rate, rng, training)
            captured.append(heads)
        return x, captured


class HashEmbeddingSource:
    """Deterministic per-token-string vectors; a test stand-in for a real
    pretrained contextual embedder."""

    def __init__(self, dim: int):
        self.dim = dim

    def _vector(self, token: str) -> np.ndarray:
        h = hashlib.sha256(token.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(h[:8], "little"))
        return rng.normal(0.0, 1.0, self.dim)

    def __call__(self, token_batches: list[list[str]], n_pad: int) -> np.ndarray:
        out = np.zeros((len(token_batches), n_pad, self.dim))
        for b, tokens in enumerate(token_batches):
            for i, tok in enumerate(tokens):
                out[b, i] = self._vector(tok)
        return out
