"""GRU encoder-decoder translator that grounds translation on detected
objects.

Encoder: a bidirectional GRU produces per-token annotation vectors; a
multihead attention layer with the annotations as queries and object features
as keys/values produces vision-aware token representations; mean-pooling both
and adding them yields the fused sentence vector that initializes the
decoder.

Decoder: two stacked GRU cells.  The first consumes the previous target word
embedding, its state queries a second multihead attention over the
vision-aware source representations, and the attention output drives the
second cell, whose state is projected to target-vocabulary logits.

Variants: ``object_level`` attends over the full object set, ``image_level``
over a single mean-pooled feature vector, and ``text_only`` drops the object
attention entirely (the vision-aware representation is the annotations and
the sentence vector is their mean).

Masked objects stay in the attention key set as zero feature vectors (their
logits reduce to the key/query biases); padding objects introduced by
batching are excluded with -inf logits so results do not depend on how a
corpus is split into batches.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .vocab import EOS, PAD, SOS

VARIANTS = ("text_only", "image_level", "object_level")


@dataclass(frozen=True)
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    d_word: int = 256
    d_hidden: int = 512
    n_heads: int = 4
    d_obj: int = 2048
    variant: str = "object_level"
    max_objects: int = 20
    obj_attn_residual: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.d_word <= 0 or self.d_hidden <= 0:
            raise ValueError("d_word and d_hidden must be positive")
        if self.d_hidden % self.n_heads != 0:
            raise ValueError("d_hidden must be divisible by n_heads")
        if self.d_hidden % 2 != 0:
            raise ValueError("d_hidden must be even (bidirectional halves)")
        if self.src_vocab_size < 4 or self.tgt_vocab_size < 4:
            raise ValueError("vocab sizes must cover the reserved ids")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


class MultiheadAttention(nn.Module):
    """Scaled dot-product multihead attention with an independent key/value
    input width; returns the per-head attention weights alongside the output.
    """

    def __init__(self, d_query: int, d_kv: int, d_model: int, n_heads: int) -> None:
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_query, d_model)
        self.k_proj = nn.Linear(d_kv, d_model)
        self.v_proj = nn.Linear(d_kv, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(
        self, query: Tensor, keys: Tensor, values: Tensor, key_mask: Tensor | None = None
    ) -> tuple[Tensor, Tensor]:
        """query (B, a, d_query); keys/values (B, b, d_kv); key_mask (B, b)
        with True marking attendable positions.  Returns (B, a, d_model)
        outputs and (B, heads, a, b) weights."""
        if query.ndim != 3 or keys.ndim != 3 or values.ndim != 3:
            raise ValueError("attention inputs must be batched 3-D tensors")
        if keys.shape[:2] != values.shape[:2]:
            raise ValueError("keys and values must agree on (batch, length)")
        bsz, a, _ = query.shape

        def heads(x: Tensor) -> Tensor:
            return x.view(bsz, -1, self.n_heads, self.d_head).transpose(1, 2)

        q = heads(self.q_proj(query))
        k = heads(self.k_proj(keys))
        v = heads(self.v_proj(values))
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if key_mask is not None:
            logits = logits.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        ctx = (weights @ v).transpose(1, 2).reshape(bsz, a, self.n_heads * self.d_head)
        return self.out_proj(ctx), weights


@dataclass
class EncoderOutput:
    annotations: Tensor  # (B, n, d_hidden) per-token bidirectional states
    vision_aware: Tensor  # (B, n, d_hidden)
    sentence: Tensor  # (B, d_hidden) fused sentence vector
    object_attention: Tensor | None  # (B, heads, n, m), None for text_only
    src_mask: Tensor  # (B, n) bool, True on real tokens


@dataclass
class DecoderHidden:
    h1: Tensor  # (B, d_hidden) word-level cell state
    h2: Tensor  # (B, d_hidden) attention-level cell state


@dataclass
class Batch:
    """Padded tensor view of a list of examples (pad id 0 everywhere)."""

    src: Tensor  # (B, n) long
    src_len: Tensor  # (B,) long
    tgt_in: Tensor  # (B, r) long: sos + gold shifted right
    tgt_out: Tensor  # (B, r) long: gold incl. eos
    tgt_len: Tensor  # (B,) long
    obj_feats: Tensor  # (B, m, d_obj) float, masked rows zeroed, pad rows zeroed
    obj_valid: Tensor  # (B, m) bool, True on real objects (masked included)
    q: Tensor | None = None  # (B, r) vision weights, 0 on pads
    d: list[np.ndarray] | None = None  # per-example relevance indicators

    def __len__(self) -> int:
        return self.src.shape[0]


def _masked_mean(x: Tensor, mask: Tensor) -> Tensor:
    """Mean over the length dimension restricted to mask=True positions."""
    mask = mask.to(x.dtype)
    return (x * mask.unsqueeze(-1)).sum(dim=1) / mask.sum(dim=1, keepdim=True)


class GroundedTranslator(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self.src_embed = nn.Embedding(cfg.src_vocab_size, cfg.d_word, padding_idx=PAD)
            self.tgt_embed = nn.Embedding(cfg.tgt_vocab_size, cfg.d_word, padding_idx=PAD)
            self.encoder_rnn = nn.GRU(
                cfg.d_word, cfg.d_hidden // 2, batch_first=True, bidirectional=True
            )
            if cfg.variant != "text_only":
                self.obj_attention = MultiheadAttention(
                    cfg.d_hidden, cfg.d_obj, cfg.d_hidden, cfg.n_heads
                )
            self.dec_rnn1 = nn.GRUCell(cfg.d_word, cfg.d_hidden)
            self.src_attention = MultiheadAttention(
                cfg.d_hidden, cfg.d_hidden, cfg.d_hidden, cfg.n_heads
            )
            self.dec_rnn2 = nn.GRUCell(cfg.d_hidden, cfg.d_hidden)
            self.out_proj = nn.Linear(cfg.d_hidden, cfg.tgt_vocab_size)

    @property
    def dtype(self) -> torch.dtype:
        return self.out_proj.weight.dtype

    def encode(
        self,
        src: Tensor,
        src_len: Tensor,
        obj_feats: Tensor | None = None,
        obj_valid: Tensor | None = None,
    ) -> EncoderOutput:
        if src.ndim != 2 or src.shape[1] == 0:
            raise ValueError("source batch must be (B, n) with n >= 1")
        if (src_len < 1).any():
            raise ValueError("empty source sentence in batch")
        n = src.shape[1]
        emb = self.src_embed(src)
        if bool((src_len == n).all()):
            annotations, _ = self.encoder_rnn(emb)
        else:
            packed = nn.utils.rnn.pack_padded_sequence(
                emb, src_len.cpu(), batch_first=True, enforce_sorted=False
            )
            out, _ = self.encoder_rnn(packed)
            annotations, _ = nn.utils.rnn.pad_packed_sequence(
                out, batch_first=True, total_length=n
            )
        src_mask = torch.arange(n, device=src.device)[None, :] < src_len[:, None]

        if self.cfg.variant == "text_only":
            return EncoderOutput(
                annotations=annotations,
                vision_aware=annotations,
                sentence=_masked_mean(annotations, src_mask),
                object_attention=None,
                src_mask=src_mask,
            )

        if obj_feats is None or obj_valid is None:
            raise ValueError(f"variant {self.cfg.variant} requires object features")
        obj_feats = obj_feats.to(self.dtype)
        if self.cfg.variant == "object_level" and not obj_valid.any(dim=1).all():
            raise ValueError("object_level variant requires at least one object per example")
        if self.cfg.variant == "image_level":
            # One pooled feature per image; masked objects contribute zeros.
            count = obj_valid.sum(dim=1, keepdim=True).clamp(min=1).to(self.dtype)
            obj_feats = (obj_feats.sum(dim=1) / count).unsqueeze(1)
            obj_valid = torch.ones(
                (obj_feats.shape[0], 1), dtype=torch.bool, device=obj_feats.device
            )
        vision_aware, obj_attn = self.obj_attention(
            annotations, obj_feats, obj_feats, key_mask=obj_valid
        )
        if self.cfg.obj_attn_residual:
            vision_aware = vision_aware + annotations
        sentence = _masked_mean(vision_aware, src_mask) + _masked_mean(annotations, src_mask)
        return EncoderOutput(annotations, vision_aware, sentence, obj_attn, src_mask)

    def decoder_init(self, sentence: Tensor) -> DecoderHidden:
        """Initial decoder state: both stacked cells start from the fused
        sentence vector.  The start symbol is consumed by the first
        decode_step (pass the sos id as the previous token)."""
        return DecoderHidden(h1=sentence, h2=sentence)

    def decode_step(
        self, prev_ids: Tensor, hidden: DecoderHidden, enc: EncoderOutput
    ) -> tuple[Tensor, DecoderHidden, Tensor]:
        """Advance one target position.  Returns logits over the target
        vocabulary, the new hidden state, and the (B, heads, n) source
        attention weights."""
        if prev_ids.ndim != 1:
            raise ValueError("prev_ids must be a (B,) id vector")
        if int(prev_ids.max()) >= self.cfg.tgt_vocab_size or int(prev_ids.min()) < 0:
            raise ValueError("target token id out of range")
        h1 = self.dec_rnn1(self.tgt_embed(prev_ids), hidden.h1)
        ctx, weights = self.src_attention(
            h1.unsqueeze(1), enc.vision_aware, enc.vision_aware, key_mask=enc.src_mask
        )
        h2 = self.dec_rnn2(ctx.squeeze(1), hidden.h2)
        logits = self.out_proj(h2)
        return logits, DecoderHidden(h1, h2), weights[:, :, 0, :]

    def forward_teacher_forced(
        self, batch: Batch, obj_feats_override: Tensor | None = None
    ) -> tuple[Tensor, Tensor]:
        """Per-token negative log-likelihood under teacher forcing.

        Returns an (B, r) nll matrix and the matching (B, r) validity mask;
        padded positions carry arbitrary values and must be masked out.
        """
        feats = batch.obj_feats if obj_feats_override is None else obj_feats_override
        enc = self.encode(batch.src, batch.src_len, feats, batch.obj_valid)
        hidden = self.decoder_init(enc.sentence)
        r = batch.tgt_in.shape[1]
        nlls = []
        for j in range(r):
            logits, hidden, _ = self.decode_step(batch.tgt_in[:, j], hidden, enc)
            nlls.append(F.cross_entropy(logits, batch.tgt_out[:, j], reduction="none"))
        nll = torch.stack(nlls, dim=1)
        tgt_mask = (
            torch.arange(r, device=nll.device)[None, :] < batch.tgt_len[:, None]
        )
        return nll, tgt_mask

    def per_example_nll(
        self, batch: Batch, obj_feats_override: Tensor | None = None
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Mean nll per example plus the raw (nll, mask) matrices."""
        nll, tgt_mask = self.forward_teacher_forced(batch, obj_feats_override)
        mask = tgt_mask.to(nll.dtype)
        per_example = (nll * mask).sum(dim=1) / mask.sum(dim=1)
        return per_example, nll, tgt_mask

    @torch.no_grad()
    def greedy_decode(
        self,
        src: Tensor,
        src_len: Tensor,
        obj_feats: Tensor | None,
        obj_valid: Tensor | None,
        max_len: int,
    ) -> list[list[int]]:
        """Argmax decoding until eos or max_len; ties break to the lowest
        token id.  The returned sequences exclude the eos symbol."""
        bsz = src.shape[0]
        if max_len <= 0:
            return [[] for _ in range(bsz)]
        enc = self.encode(src, src_len, obj_feats, obj_valid)
        hidden = self.decoder_init(enc.sentence)
        prev = torch.full((bsz,), SOS, dtype=torch.long, device=src.device)
        finished = np.zeros(bsz, dtype=bool)
        steps: list[np.ndarray] = []
        for _ in range(max_len):
            logits, hidden, _ = self.decode_step(prev, hidden, enc)
            ids = np.argmax(logits.detach().cpu().numpy(), axis=-1)
            steps.append(ids)
            finished |= ids == EOS
            if finished.all():
                break
            prev = torch.as_tensor(ids, dtype=torch.long, device=src.device)
        out: list[list[int]] = []
        matrix = np.stack(steps, axis=1)
        for row in matrix:
            toks: list[int] = []
            for t in row:
                if t == EOS:
                    break
                toks.append(int(t))
            out.append(toks)
        return out
