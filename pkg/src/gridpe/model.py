"""Configurable transformer: encoder-decoder or decoder-only, pre-norm blocks,
pluggable positional encoding, greedy decoding, and a binary checkpoint format.

Size presets (feed-forward width, layers, heads): small (1024, 1, 4),
medium (1024, 4, 8), large (2024, 6, 8); d_model 512 and vocab 20 throughout.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .posenc import PosEncSpec, bucket_matrix, rope_tables, sinusoidal_table
from .rng import CounterStream, stream
from .tokenizer import (
    END,
    IGNORE,
    MAX_TOKENS,
    PAD,
    ROW_CLOSE,
    ROW_OPEN,
    SEP,
    START,
    VOCAB_SIZE,
    CapacityError,
    ComposedExample,
    TokenSequence,
    tokenize,
)

PRESETS = {
    "small": {"n_layers": 1, "n_heads": 4, "d_ff": 1024},
    "medium": {"n_layers": 4, "n_heads": 8, "d_ff": 1024},
    "large": {"n_layers": 6, "n_heads": 8, "d_ff": 2024},  # 2024 kept verbatim
}

ARCHS = ("encoder_decoder", "decoder_only")

_NEG = -1e9  # additive mask value; finite so activations stay finite


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "encoder_decoder"
    d_model: int = 512
    n_layers: int = 4
    n_heads: int = 8
    d_ff: int = 1024
    dropout: float = 0.1
    vocab: int = VOCAB_SIZE
    max_tokens: int = MAX_TOKENS
    posenc: PosEncSpec = field(default_factory=lambda: PosEncSpec(kind="1d"))

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.posenc.d_model != self.d_model:
            raise ValueError("posenc.d_model must match the model d_model")

    @classmethod
    def preset(cls, name: str, arch: str = "encoder_decoder", posenc_kind: str = "1d",
               d_model: int = 512, dropout: float = 0.1) -> "ModelConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; expected one of {tuple(PRESETS)}")
        p = PRESETS[name]
        return cls(
            arch=arch,
            d_model=d_model,
            n_layers=p["n_layers"],
            n_heads=p["n_heads"],
            d_ff=p["d_ff"],
            dropout=dropout,
            posenc=PosEncSpec(kind=posenc_kind, d_model=d_model),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["posenc"] = PosEncSpec(**d["posenc"])
        return cls(**d)


@dataclass
class Batch:
    """Padded model-ready arrays; *_mask is True on real tokens."""

    dec_ids: np.ndarray
    dec_coords: np.ndarray
    dec_spatial: np.ndarray
    dec_mask: np.ndarray
    targets: np.ndarray
    enc_ids: np.ndarray | None = None
    enc_coords: np.ndarray | None = None
    enc_spatial: np.ndarray | None = None
    enc_mask: np.ndarray | None = None
    hook_bias: np.ndarray | None = None  # (B, Tq, Tk) additive, on self-attention


def collate(composed: list[ComposedExample], hook=None) -> Batch:
    """Pad a list of composed examples into one Batch. The optional attention
    hook(coords, spatial) -> (T, T) is evaluated per example over its real
    tokens (encoder tokens for encoder-decoder, the combined sequence for
    decoder-only)."""
    arch = composed[0].arch
    b = len(composed)
    td = max(len(c.dec_in_tokens) for c in composed)
    dec_ids = np.full((b, td), PAD, dtype=np.int64)
    dec_coords = np.zeros((b, td, 2), dtype=np.int64)
    dec_spatial = np.zeros((b, td), dtype=bool)
    dec_mask = np.zeros((b, td), dtype=bool)
    targets = np.full((b, td), IGNORE, dtype=np.int64)
    for i, c in enumerate(composed):
        n = len(c.dec_in_tokens)
        dec_ids[i, :n] = c.dec_in_tokens
        dec_coords[i, :n] = c.dec_in_coords
        dec_spatial[i, :n] = c.dec_in_spatial
        dec_mask[i, :n] = True
        targets[i, :n] = c.targets
    batch = Batch(dec_ids, dec_coords, dec_spatial, dec_mask, targets)
    if arch == "encoder_decoder":
        te = max(len(c.enc_tokens) for c in composed)
        enc_ids = np.full((b, te), PAD, dtype=np.int64)
        enc_coords = np.zeros((b, te, 2), dtype=np.int64)
        enc_spatial = np.zeros((b, te), dtype=bool)
        enc_mask = np.zeros((b, te), dtype=bool)
        for i, c in enumerate(composed):
            n = len(c.enc_tokens)
            enc_ids[i, :n] = c.enc_tokens
            enc_coords[i, :n] = c.enc_coords
            enc_spatial[i, :n] = c.enc_spatial
            enc_mask[i, :n] = True
        batch.enc_ids, batch.enc_coords = enc_ids, enc_coords
        batch.enc_spatial, batch.enc_mask = enc_spatial, enc_mask
    if hook is not None:
        tq = te if arch == "encoder_decoder" else td
        bias = np.zeros((b, tq, tq), dtype=np.float64)
        for i, c in enumerate(composed):
            coords = c.enc_coords if arch == "encoder_decoder" else c.dec_in_coords
            spatial = c.enc_spatial if arch == "encoder_decoder" else c.dec_in_spatial
            n = len(coords)
            bias[i, :n, :n] = hook(np.asarray(coords), np.asarray(spatial))
        batch.hook_bias = bias
    return batch


class TransformerModel:
    """Parameters plus forward/decode. Single-writer during training; frozen
    parameters may be shared read-only across evaluation workers."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype).type
        self.params: dict[str, Tensor] = {}
        rng = stream(seed, "init")
        c = config

        def weight(name, shape):
            data = rng.normal(0.0, 0.02, size=shape).astype(self.dtype)
            self.params[name] = Tensor(data, requires_grad=True)

        def zeros(name, shape):
            self.params[name] = Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True)

        def ones(name, shape):
            self.params[name] = Tensor(np.ones(shape, dtype=self.dtype), requires_grad=True)

        def linear(name, d_in, d_out):
            weight(name + ".w", (d_in, d_out))
            zeros(name + ".b", (d_out,))

        def ln(name):
            ones(name + ".g", (c.d_model,))
            zeros(name + ".b", (c.d_model,))

        def block(prefix, cross: bool):
            ln(f"{prefix}.ln1")
            for proj in ("q", "k", "v", "o"):
                linear(f"{prefix}.self.{proj}", c.d_model, c.d_model)
            if cross:
                ln(f"{prefix}.lnc")
                for proj in ("q", "k", "v", "o"):
                    linear(f"{prefix}.cross.{proj}", c.d_model, c.d_model)
            ln(f"{prefix}.ln2")
            linear(f"{prefix}.ff1", c.d_model, c.d_ff)
            linear(f"{prefix}.ff2", c.d_ff, c.d_model)

        weight("tok_emb", (c.vocab, c.d_model))
        if c.posenc.kind == "2d":
            zeros("pe_flag", (1,))  # learned marker added to non-spatial tokens
        if c.posenc.kind == "learned":
            weight("pos_emb", (c.max_tokens, c.d_model))
        if c.arch == "encoder_decoder":
            if c.posenc.kind == "relative_bucket":
                zeros("enc.rel_bias", (c.posenc.num_buckets, c.n_heads))
            for i in range(c.n_layers):
                block(f"enc.{i}", cross=False)
            ln("enc.ln_f")
        if c.posenc.kind == "relative_bucket":
            zeros("dec.rel_bias", (c.posenc.num_buckets, c.n_heads))
        for i in range(c.n_layers):
            block(f"dec.{i}", cross=(c.arch == "encoder_decoder"))
        ln("dec.ln_f")
        linear("out", c.d_model, c.vocab)

        self._d_head = c.d_model // c.n_heads
        self._scale = 1.0 / math.sqrt(self._d_head)
        # fixed-encoding tables, gathered per batch instead of recomputed
        if c.posenc.kind == "1d":
            self._pe_1d = sinusoidal_table(np.arange(c.max_tokens), c.d_model, c.posenc.base).astype(self.dtype)
        if c.posenc.kind == "2d":
            self._pe_half = sinusoidal_table(np.arange(c.max_tokens), c.d_model // 2, c.posenc.base).astype(self.dtype)
        if c.posenc.kind == "rope":
            cos, sin = rope_tables(np.arange(c.max_tokens), self._d_head, c.posenc.base)
            self._rope_cos = cos.astype(self.dtype)
            self._rope_sin = sin.astype(self.dtype)
        if c.posenc.kind == "relative_bucket":
            self._buckets = bucket_matrix(c.max_tokens, c.posenc.num_buckets, c.posenc.max_distance)

    # -- bookkeeping ---------------------------------------------------------

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def param_norms(self) -> dict[str, float]:
        return {k: float(np.linalg.norm(v.data)) for k, v in self.params.items()}

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            arr = np.asarray(arrays[k], dtype=self.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()

    # -- forward pieces --------------------------------------------------------

    def _linear(self, name: str, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.params[name + ".w"]), self.params[name + ".b"])

    def _ln(self, name: str, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.params[name + ".g"], self.params[name + ".b"])

    def _heads(self, x: Tensor, b: int, t: int) -> Tensor:
        x = ad.reshape(x, (b, t, self.config.n_heads, self._d_head))
        return ad.transpose(x, (0, 2, 1, 3))

    def _merge(self, x: Tensor, b: int, t: int) -> Tensor:
        x = ad.transpose(x, (0, 2, 1, 3))
        return ad.reshape(x, (b, t, self.config.d_model))

    def _attn(
        self,
        prefix: str,
        xq: Tensor,
        xkv: Tensor,
        mask: np.ndarray,
        rel_bias: str | None,
        use_rope: bool,
        hook_bias: np.ndarray | None,
        drop: CounterStream | None,
    ) -> Tensor:
        b, tq = xq.shape[0], xq.shape[1]
        tk = xkv.shape[1]
        q = self._heads(self._linear(f"{prefix}.q", xq), b, tq)
        k = self._heads(self._linear(f"{prefix}.k", xkv), b, tk)
        v = self._heads(self._linear(f"{prefix}.v", xkv), b, tk)
        if use_rope:
            q = ad.rotate_pairs(q, self._rope_cos[:tq], self._rope_sin[:tq])
            k = ad.rotate_pairs(k, self._rope_cos[:tk], self._rope_sin[:tk])
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), self._scale)
        scores = ad.add(scores, Tensor(mask))
        if rel_bias is not None:
            bias = ad.embedding(self.params[rel_bias], self._buckets[:tq, :tk])  # (tq, tk, h)
            bias = ad.reshape(ad.transpose(bias, (2, 0, 1)), (1, self.config.n_heads, tq, tk))
            scores = ad.add(scores, bias)
        if hook_bias is not None:
            scores = ad.add(scores, Tensor(hook_bias[:, None, :, :].astype(self.dtype)))
        attn = ad.softmax(scores, axis=-1)
        ctx = self._merge(ad.matmul(attn, v), b, tq)
        return ad.dropout(self._linear(f"{prefix}.o", ctx), self.config.dropout, drop)

    def _ff(self, prefix: str, x: Tensor, drop: CounterStream | None) -> Tensor:
        h = ad.gelu(self._linear(f"{prefix}.ff1", x))
        return ad.dropout(self._linear(f"{prefix}.ff2", h), self.config.dropout, drop)

    def _embed(
        self,
        ids: np.ndarray,
        coords: np.ndarray,
        spatial: np.ndarray,
        drop: CounterStream | None,
    ) -> Tensor:
        c = self.config
        b, t = ids.shape
        x = ad.mul(ad.embedding(self.params["tok_emb"], ids), math.sqrt(c.d_model))
        kind = c.posenc.kind
        if kind == "1d":
            x = ad.add(x, Tensor(self._pe_1d[:t]))
        elif kind == "2d":
            cap = c.max_tokens - 1
            xi = np.minimum(np.where(spatial, coords[..., 0], 0), cap)
            yi = np.minimum(np.where(spatial, coords[..., 1], 0), cap)
            pe = np.concatenate([self._pe_half[xi], self._pe_half[yi]], axis=-1)
            x = ad.add(x, Tensor(pe))
            marker = (~spatial)[..., None].astype(self.dtype)
            x = ad.add(x, ad.mul(self.params["pe_flag"], Tensor(marker)))
        elif kind == "learned":
            pos = np.broadcast_to(np.arange(t), (b, t))
            x = ad.add(x, ad.embedding(self.params["pos_emb"], pos))
        return ad.dropout(x, c.dropout, drop)

    @staticmethod
    def _pad_mask(mask: np.ndarray, dtype) -> np.ndarray:
        return np.where(mask, 0.0, _NEG).astype(dtype)[:, None, None, :]

    def _causal_pad_mask(self, mask: np.ndarray) -> np.ndarray:
        t = mask.shape[1]
        causal = np.triu(np.full((t, t), _NEG, dtype=self.dtype), k=1)
        return self._pad_mask(mask, self.dtype) + causal[None, None, :, :]

    def forward(self, batch: Batch, drop: CounterStream | None = None) -> Tensor:
        """Logits (B, T_dec, vocab). drop=None disables dropout (eval mode)."""
        c = self.config
        use_rope = c.posenc.kind == "rope"
        use_rel = c.posenc.kind == "relative_bucket"
        if batch.dec_ids.shape[1] > c.max_tokens or (
            batch.enc_ids is not None and batch.enc_ids.shape[1] > c.max_tokens
        ):
            raise CapacityError(f"sequence exceeds max_tokens {c.max_tokens}")
        if c.arch == "encoder_decoder":
            enc_out = self._encode(batch, drop)
            return self._decode_stack(batch, enc_out, drop, use_rope, use_rel)
        return self._decode_stack(batch, None, drop, use_rope, use_rel)

    def _encode(self, batch: Batch, drop: CounterStream | None) -> Tensor:
        c = self.config
        x = self._embed(batch.enc_ids, batch.enc_coords, batch.enc_spatial, drop)
        mask = self._pad_mask(batch.enc_mask, self.dtype)
        use_rope = c.posenc.kind == "rope"
        rel = "enc.rel_bias" if c.posenc.kind == "relative_bucket" else None
        for i in range(c.n_layers):
            p = f"enc.{i}"
            xn = self._ln(f"{p}.ln1", x)
            h = ad.add(x, self._attn(f"{p}.self", xn, xn, mask, rel, use_rope, batch.hook_bias, drop))
            x = ad.add(h, self._ff(p, self._ln(f"{p}.ln2", h), drop))
        return self._ln("enc.ln_f", x)

    def _decode_stack(
        self,
        batch: Batch,
        enc_out: Tensor | None,
        drop: CounterStream | None,
        use_rope: bool,
        use_rel: bool,
    ) -> Tensor:
        c = self.config
        x = self._embed(batch.dec_ids, batch.dec_coords, batch.dec_spatial, drop)
        self_mask = self._causal_pad_mask(batch.dec_mask)
        rel_name = "dec.rel_bias" if use_rel else None
        hook = batch.hook_bias if c.arch == "decoder_only" else None
        cross_mask = None
        if enc_out is not None:
            cross_mask = self._pad_mask(batch.enc_mask, self.dtype)
        for i in range(c.n_layers):
            p = f"dec.{i}"
            xn = self._ln(f"{p}.ln1", x)
            h = ad.add(x, self._attn(f"{p}.self", xn, xn, self_mask, rel_name, use_rope, hook, drop))
            if enc_out is not None:
                h = ad.add(
                    h,
                    self._attn(
                        f"{p}.cross", self._ln(f"{p}.lnc", h), enc_out,
                        cross_mask, None, False, None, drop,
                    ),
                )
            x = ad.add(h, self._ff(p, self._ln(f"{p}.ln2", h), drop))
        x = self._ln("dec.ln_f", x)
        return self._linear("out", x)

    def loss(self, batch: Batch, drop: CounterStream | None = None) -> Tensor:
        logits = self.forward(batch, drop)
        flat = ad.reshape(logits, (-1, self.config.vocab))
        return ad.cross_entropy(flat, batch.targets.reshape(-1), ignore_index=IGNORE)


# -- greedy decoding ------------------------------------------------------------------


class _CoordTracker:
    """Assigns (x, y, spatial) to generated target-frame tokens.

    raw format needs the output width (supplied by the evaluator from the
    ground truth, mirroring detokenize); bracketed self-delimits.
    """

    def __init__(self, fmt: str, width: int | None):
        self.fmt = fmt
        self.width = width
        self.cells = 0
        self.y = 0
        self.x = 0

    def next(self, token: int) -> tuple[int, int, bool]:
        if self.fmt == "raw":
            if token <= 9 and self.width:
                coord = (self.cells % self.width, self.cells // self.width, True)
                self.cells += 1
                return coord
            return (0, 0, False)
        if token == ROW_OPEN:
            return (0, self.y, False)
        if token == ROW_CLOSE:
            coord = (0, self.y, False)
            self.y += 1
            self.x = 0
            return coord
        if token <= 9:
            coord = (self.x, self.y, True)
            self.x += 1
            return coord
        return (0, 0, False)


def greedy_decode(
    model: TransformerModel,
    inputs: list,
    fmt: str,
    output_widths: list[int | None],
    max_steps: list[int],
    chunk: int = 128,
) -> list[list[int]]:
    """Argmax-per-step generation of the output framing [Start ... End].

    inputs: Grids. Deterministic given parameters; argmax ties break toward
    the lowest token id. Stops per sequence at End, its step budget, or
    model capacity; the caller scores non-decodable outputs as 0.
    """
    out: list[list[int]] = []
    for lo in range(0, len(inputs), chunk):
        out.extend(
            _greedy_chunk(
                model,
                inputs[lo : lo + chunk],
                fmt,
                output_widths[lo : lo + chunk],
                max_steps[lo : lo + chunk],
            )
        )
    return out


def _greedy_chunk(model, inputs, fmt, output_widths, max_steps):
    c = model.config
    b = len(inputs)
    enc_seqs = [tokenize(g, fmt) for g in inputs]
    if c.arch == "encoder_decoder":
        prompts = [[(START, (0, 0), False)] for _ in range(b)]
        enc_batch = _encoder_batch(enc_seqs)
        with ad.no_grad():
            enc_out = model._encode(enc_batch, None)
    else:
        prompts = [
            [(t, xy, sp) for t, xy, sp in zip(s.tokens + (SEP,), s.coords + ((0, 0),), s.spatial + (False,))]
            for s in enc_seqs
        ]
        enc_batch, enc_out = None, None
    generated: list[list[int]] = [[] for _ in range(b)]
    trackers = [_CoordTracker(fmt, w) for w in output_widths]
    done = [False] * b
    while not all(done):
        td = max(len(p) for p in prompts)
        dec_ids = np.full((b, td), PAD, dtype=np.int64)
        dec_coords = np.zeros((b, td, 2), dtype=np.int64)
        dec_spatial = np.zeros((b, td), dtype=bool)
        dec_mask = np.zeros((b, td), dtype=bool)
        for i, p in enumerate(prompts):
            for j, (tok, xy, sp) in enumerate(p):
                dec_ids[i, j] = tok
                dec_coords[i, j] = xy
                dec_spatial[i, j] = sp
            dec_mask[i, : len(p)] = True
        batch = Batch(dec_ids, dec_coords, dec_spatial, dec_mask, np.full((b, td), IGNORE))
        if enc_batch is not None:
            batch.enc_ids, batch.enc_coords = enc_batch.enc_ids, enc_batch.enc_coords
            batch.enc_spatial, batch.enc_mask = enc_batch.enc_spatial, enc_batch.enc_mask
        with ad.no_grad():
            logits = model._decode_stack(
                batch, enc_out, None,
                use_rope=c.posenc.kind == "rope",
                use_rel=c.posenc.kind == "relative_bucket",
            )
        last = logits.data[np.arange(b), [len(p) - 1 for p in prompts]]
        next_ids = last.argmax(axis=1)
        for i in range(b):
            if done[i]:
                continue
            tok = int(next_ids[i])
            generated[i].append(tok)
            if tok == END or len(generated[i]) >= max_steps[i] or len(prompts[i]) + 1 >= c.max_tokens:
                done[i] = True
                continue
            x, y, sp = trackers[i].next(tok)
            prompts[i].append((tok, (x, y), sp))
    return generated


def _encoder_batch(enc_seqs: list[TokenSequence]) -> Batch:
    b = len(enc_seqs)
    te = max(len(s) for s in enc_seqs)
    enc_ids = np.full((b, te), PAD, dtype=np.int64)
    enc_coords = np.zeros((b, te, 2), dtype=np.int64)
    enc_spatial = np.zeros((b, te), dtype=bool)
    enc_mask = np.zeros((b, te), dtype=bool)
    for i, s in enumerate(enc_seqs):
        n = len(s)
        enc_ids[i, :n] = s.tokens
        enc_coords[i, :n] = s.coords
        enc_spatial[i, :n] = s.spatial
        enc_mask[i, :n] = True
    dummy = np.zeros((b, 1), dtype=np.int64)
    return Batch(
        dec_ids=dummy,
        dec_coords=np.zeros((b, 1, 2), dtype=np.int64),
        dec_spatial=np.zeros((b, 1), dtype=bool),
        dec_mask=np.ones((b, 1), dtype=bool),
        targets=np.full((b, 1), IGNORE),
        enc_ids=enc_ids,
        enc_coords=enc_coords,
        enc_spatial=enc_spatial,
        enc_mask=enc_mask,
    )


# -- checkpoint io ----------------------------------------------------------------------

_MAGIC = b"GPE1"


def save_checkpoint(model: TransformerModel, path: str | Path) -> None:
    """Single file: magic, u32 header length, header JSON (config + ordered
    parameter names/shapes), then raw little-endian float32 blocks."""
    header = {
        "version": 1,
        "config": model.config.to_dict(),
        "dtype": "float32",
        "params": [[k, list(v.data.shape)] for k, v in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in model.params.values():
            fh.write(np.ascontiguousarray(v.data, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path, dtype=np.float32) -> TransformerModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a gridpe checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        model = TransformerModel(ModelConfig.from_dict(header["config"]), dtype=dtype)
        arrays = {}
        for name, shape in header["params"]:
            n = int(np.prod(shape))
            arr = np.frombuffer(fh.read(n * 4), dtype="<f4").reshape(shape)
            arrays[name] = arr
        model.load_state(arrays)
    return model
