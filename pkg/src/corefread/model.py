"""The reading-comprehension model: a bidirectional-attention baseline and
its self-attention variants.

Pipeline (base): embed -> contextual BiGRU -> bidirectional attention ->
2-layer modeling BiGRU -> feed-forward scoring -> masked softmax over
context positions. The "early" variant swaps the contextual BiGRU for a
stacked multi-head self-attention encoder (shared between context and query);
the "late" variant inserts one self-attention layer after the bidirectional
attention; "both" does both. Every self-attention head's weight matrix over
the context is captured so auxiliary supervision and inspection can reach it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig, SupervisionAssignment
from .layers import (
    BiGRU,
    HashEmbeddingSource,
    LayerNorm,
    Linear,
    SelfAttentionEncoder,
    TokenEmbedder,
    dropout,
)
from .params import ParameterStore
from .tensor import Tensor

NEG_PENALTY = 1e30


@dataclass
class ForwardOutput:
    answer_logits: Tensor  # (B, n)
    answer_probs: Tensor  # (B, n), masked softmax over real context positions
    attention: dict  # location -> [layer][head] Tensor (B, n, n), context side


def pad_attention_mask(token_mask: np.ndarray) -> np.ndarray:
    """(B, n) token mask -> (B, 1, n, n) attention mask.

    Real rows may attend to every real column; padded rows attend only to
    themselves so their softmax stays defined while remaining isolated.
    """
    B, n = token_mask.shape
    eye = np.eye(n)[None]
    rows = token_mask[:, :, None]
    cols = token_mask[:, None, :]
    return (rows * cols + (1.0 - rows) * eye)[:, None]


def windowed_attention_mask(token_mask: np.ndarray, windows: np.ndarray) -> np.ndarray:
    """Sentence-window variant of pad_attention_mask for depparse heads."""
    rows = token_mask[:, :, None]
    eye = np.eye(token_mask.shape[1])[None]
    return (rows * windows + (1.0 - rows) * eye)[:, None]


class Model:
    def __init__(self, config: ModelConfig, vocab_size: int, char_vocab_size: int,
                 seed: int = 0, store: ParameterStore | None = None,
                 contextual_stage: str | None = None):
        config.validate()
        self.config = config
        self.store = store if store is not None else ParameterStore(seed)
        c = config
        if contextual_stage is None:
            contextual_stage = "sa" if c.variant in ("early", "both") else "bigru"
        self.contextual_stage = contextual_stage

        if c.external_embedding is None:
            self.embedder = TokenEmbedder(
                self.store, "embed", vocab_size, c.word_dim,
                char_vocab_size, c.char_dim, c.char_filters, c.char_width,
            )
            self.external_source = None
        else:
            self.external_source = HashEmbeddingSource(c.external_dim)
            self.external_proj = Linear(self.store, "embed.proj", c.external_dim, c.d_model)

        if contextual_stage == "bigru":
            self.contextual = BiGRU(self.store, "contextual", c.d_model, c.hidden, layers=1)
        elif contextual_stage == "sa":
            self.contextual = SelfAttentionEncoder(
                self.store, "early", c.early_layers, c.d_model, c.heads,
                c.resolved_attn_dim(), c.ffn_mult, position_signal=c.position_signal,
            )
        elif contextual_stage == "identity":
            self.contextual = None
        else:
            raise ValueError(f"unknown contextual stage {contextual_stage!r}")

        d_ctx = c.d_model
        self.flow_wh = self.store.create("attnflow.w_h", (d_ctx, 1), init="xavier")
        self.flow_wu = self.store.create("attnflow.w_u", (d_ctx, 1), init="xavier")
        # positive product weights start the trilinear term as plain
        # dot-product similarity, so content matching works from step one
        self.flow_whu = self.store.create("attnflow.w_hu", (d_ctx,), init="positive_uniform")
        self.flow_ln = LayerNorm(self.store, "attnflow.ln", 4 * d_ctx)

        if c.variant in ("late", "both"):
            self.late = SelfAttentionEncoder(
                self.store, "late", c.late_layers, 4 * d_ctx, c.heads,
                c.resolved_attn_dim(), c.ffn_mult, position_signal=False,
            )
        else:
            self.late = None

        self.modeling = BiGRU(self.store, "modeling", 4 * d_ctx, c.hidden, layers=2)
        self.modeling_ln = LayerNorm(self.store, "modeling.ln", 2 * c.hidden)
        self.output = Linear(self.store, "output.lin", 4 * d_ctx + 2 * c.hidden, 1)

    # -- embedding ---------------------------------------------------------

    def _embed(self, ids, char_ids, char_lengths, tokens, n_pad, rng, training):
        c = self.config
        if self.external_source is not None:
            vecs = Tensor(self.external_source(tokens, n_pad))
            proj = self.external_proj(vecs)
            return dropout(proj, c.external_dropout, rng, training)
        return self.embedder(ids, char_ids, char_lengths, c.dropout, rng, training)

    # -- encoder stages ----------------------------------------------------

    def _sa_layer_masks(self, token_mask, windows):
        """Per-layer (B, H, n, n) masks for the early encoder on the context:
        depparse-supervised heads see only their own sentence."""
        c = self.config
        base = pad_attention_mask(token_mask)  # (B, 1, n, n)
        dep_layers = {
            a.layer: a.head
            for a in c.supervision
            if a.location == "early" and a.kind == "depparse"
        }
        masks = []
        for layer in range(c.early_layers):
            if layer in dep_layers:
                if windows is None:
                    raise ValueError(
                        "depparse supervision needs sentence windows in the batch"
                    )
                full = np.broadcast_to(base, (base.shape[0], c.heads) + base.shape[2:]).copy()
                full[:, dep_layers[layer]] = windowed_attention_mask(token_mask, windows)[:, 0]
                masks.append(full)
            else:
                masks.append(base)
        return masks

    def _contextual(self, x, token_mask, windows, rng, training, capture: bool):
        c = self.config
        if self.contextual_stage == "identity":
            return x, None
        if self.contextual_stage == "bigru":
            out = self.contextual(x, token_mask, c.dropout, rng, training)
            return out, None
        masks = (
            self._sa_layer_masks(token_mask, windows)
            if capture
            else [pad_attention_mask(token_mask)] * c.early_layers
        )
        out, attn = self.contextual(x, masks, c.dropout, rng, training)
        return out, (attn if capture else None)

    def _attention_flow(self, H, U, context_mask, query_mask, return_parts=False):
        """Query-aware context representation of width 4*d."""
        B, n, d = H.shape
        m = U.shape[1]
        a = T.matmul(H, self.flow_wh)  # (B, n, 1)
        b = T.transpose(T.matmul(U, self.flow_wu), (0, 2, 1))  # (B, 1, m)
        hw = T.mul(H, T.broadcast_to(self.flow_whu, (B, n, d)))
        sim = T.matmul(hw, T.transpose(U, (0, 2, 1)))  # (B, n, m)
        sim = T.add(sim, T.broadcast_to(a, (B, n, m)))
        sim = T.add(sim, T.broadcast_to(b, (B, n, m)))

        qmask = np.broadcast_to(query_mask[:, None, :], (B, n, m))
        c2q = T.masked_softmax(sim, qmask)
        attended_query = T.matmul(c2q, U)  # (B, n, d)

        penalty = Tensor((1.0 - qmask) * -NEG_PENALTY)
        row_best = T.max_over_axis(T.add(sim, penalty), axis=2)  # (B, n)
        q2c = T.masked_softmax(row_best, context_mask)
        attended_context = T.matmul(T.reshape(q2c, (B, 1, n)), H)  # (B, 1, d)
        tiled = T.broadcast_to(attended_context, (B, n, d))

        merged = T.concat_along_axis(
            [H, attended_query, T.mul(H, attended_query), T.mul(H, tiled)], axis=2
        )
        out = self.flow_ln(merged)
        if return_parts:
            return out, {"c2q": c2q, "q2c": q2c, "attended_query": attended_query}
        return out

    # -- full forward ------------------------------------------------------

    def forward(self, batch, mode: str = "eval", rng=None) -> ForwardOutput:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be train or eval, got {mode!r}")
        training = mode == "train"
        if training and self.config.dropout > 0 and rng is None:
            raise ValueError("training mode needs an rng for dropout")
        c = self.config
        cmask = batch.context_mask
        qmask = batch.query_mask
        windows = getattr(batch, "window_masks", None)

        ctx_emb = self._embed(
            batch.context_ids, batch.context_char_ids, batch.context_char_lengths,
            batch.context_tokens, batch.n, rng, training,
        )
        qry_emb = self._embed(
            batch.query_ids, batch.query_char_ids, batch.query_char_lengths,
            batch.query_tokens, batch.m, rng, training,
        )

        H, early_attn = self._contextual(ctx_emb, cmask, windows, rng, training, capture=True)
        U, _ = self._contextual(qry_emb, qmask, None, rng, training, capture=False)

        G = self._attention_flow(H, U, cmask, qmask)

        attention = {}
        if early_attn is not None:
            attention["early"] = early_attn
        if self.late is not None:
            late_mask = pad_attention_mask(cmask)
            dep_heads = [
                a for a in c.supervision if a.location == "late" and a.kind == "depparse"
            ]
            if dep_heads:
                if windows is None:
                    raise ValueError(
                        "depparse supervision needs sentence windows in the batch"
                    )
                masks = []
                for layer in range(c.late_layers):
                    full = np.broadcast_to(
                        late_mask, (late_mask.shape[0], c.heads) + late_mask.shape[2:]
                    ).copy()
                    for a in dep_heads:
                        if a.layer == layer:
                            full[:, a.head] = windowed_attention_mask(cmask, windows)[:, 0]
                    masks.append(full)
            else:
                masks = [late_mask] * c.late_layers
            G, late_attn = self.late(G, masks, c.dropout, rng, training)
            attention["late"] = late_attn

        M = self.modeling(G, cmask, c.dropout, rng, training)
        M = self.modeling_ln(M)

        feats = T.concat_along_axis([G, M], axis=2)
        feats = dropout(feats, c.dropout, rng, training)
        logits = T.reshape(self.output(feats), (batch.size, batch.n))
        probs = T.masked_softmax(logits, cmask)
        return ForwardOutput(answer_logits=logits, answer_probs=probs, attention=attention)

    def attention_for(self, output: ForwardOutput, assignment: SupervisionAssignment) -> Tensor:
        try:
            return output.attention[assignment.location][assignment.layer][assignment.head]
        except (KeyError, IndexError):
            raise KeyError(
                f"no captured attention at {assignment.location}"
                f" layer {assignment.layer} head {assignment.head}"
            ) from None

    def parameter_count(self) -> int:
        return self.store.total_parameters()


def assemble(config: ModelConfig, vocab_size: int, char_vocab_size: int, seed: int) -> Model:
    """Create a model with all parameters initialized deterministically."""
    return Model(config, vocab_size, char_vocab_size, seed=seed)
