"""Toy encoder-decoder transformer with a freezable backbone and soft prompts.

The backbone (embeddings, positional table, pre-LN encoder/decoder stacks,
output projection tied to the token embedding) stands in for a pretrained
seq2seq model. Prompt tensors live outside it: a block prepended to the
encoder input, a block prepended to the decoder input, and inner-prompt rows
added elementwise to source token embeddings to mark document structure.
Cross-attention weights are captured for probing.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import BOS_ID, Document

STRATEGIES = ("none", "interval", "sequential", "fixed_k")


class ConfigError(ValueError):
    pass


class LengthOverflowError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelDims:
    d: int
    layers: int
    heads: int
    ffn: int
    vocab: int
    max_pos: int

    def __post_init__(self) -> None:
        if min(self.d, self.layers, self.heads, self.ffn, self.max_pos) < 1:
            raise ConfigError("all model dimensions must be >= 1")
        if self.vocab <= 4:
            raise ConfigError("vocab must exceed the four reserved ids")
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} must be divisible by heads={self.heads}")


@dataclass(frozen=True)
class PromptConfig:
    """Prompt shapes and placement.

    ``strategy`` picks the inner-prompt indexing scheme; ``n_max`` caps the
    sequential/fixed_k index (the extra overflow row makes n_max + 1 rows).
    ``shared`` makes the decoder prompt alias the encoder prompt tensor.
    """

    len_en: int = 100
    len_de: int = 100
    strategy: str = "sequential"
    k: int = 10
    n_max: int = 1
    shared: bool = False
    encoder_only: bool = False
    decoder_only: bool = False

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.len_en < 0 or self.len_de < 0:
            raise ConfigError("prompt lengths must be >= 0")
        if self.strategy == "fixed_k" and self.k < 1:
            raise ConfigError("fixed_k requires k >= 1")
        if self.strategy in ("sequential", "fixed_k") and self.n_max < 1:
            raise ConfigError(f"{self.strategy} requires n_max >= 1")
        if self.encoder_only and self.decoder_only:
            raise ConfigError("encoder_only and decoder_only are mutually exclusive")
        if self.shared and self.len_en != self.len_de:
            raise ConfigError("shared prompts require len_en == len_de")

    @property
    def effective_len_en(self) -> int:
        return 0 if self.decoder_only else self.len_en

    @property
    def effective_len_de(self) -> int:
        return 0 if self.encoder_only else self.len_de

    @property
    def inner_rows(self) -> int:
        if self.strategy == "none":
            return 0
        if self.strategy == "interval":
            return 2
        return self.n_max + 1


@dataclass
class BackboneParams:
    """Named backbone tensors plus the frozen flag."""

    dims: ModelDims
    params: dict[str, Tensor]
    frozen: bool = False

    def freeze(self) -> None:
        self.frozen = True
        for t in self.params.values():
            t.requires_grad = False

    def unfreeze(self) -> None:
        self.frozen = False
        for t in self.params.values():
            t.requires_grad = True

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(self.params[name].data.tobytes())
        return digest.hexdigest()

    @property
    def embed(self) -> Tensor:
        return self.params["embed/token"]

    @property
    def pos(self) -> Tensor:
        return self.params["embed/pos"]

    def size(self) -> int:
        return sum(t.data.size for t in self.params.values())


@dataclass
class PromptSet:
    """The trainable prompt tensors. ``p_de`` is ``p_en`` itself when shared."""

    p_en: Tensor
    p_de: Tensor
    p_in: Tensor | None
    config: PromptConfig

    def named_tensors(self) -> dict[str, Tensor]:
        """Unique trainable tensors by checkpoint name (shared P_de omitted)."""
        out: dict[str, Tensor] = {}
        if self.p_en.data.shape[0] > 0:
            out["prompts/P_en"] = self.p_en
        if self.p_de.data.shape[0] > 0 and self.p_de is not self.p_en:
            out["prompts/P_de"] = self.p_de
        if self.p_in is not None:
            out["prompts/P_in"] = self.p_in
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, t in self.named_tensors().items():
            t.data[...] = snap[name]


@dataclass(frozen=True)
class AttentionRecord:
    """Cross-attention averaged over layers and heads; rows are distributions.

    ``len_de``/``len_en`` give the prompt-block boundaries so the
    prompt-to-prompt and summary-to-source quadrants are recoverable.
    """

    matrix: np.ndarray
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    len_de: int
    len_en: int
    layers: int
    heads: int


@dataclass(frozen=True)
class ForwardResult:
    logits: Tensor
    attention: AttentionRecord


@dataclass(frozen=True)
class EncodedSource:
    memory: Tensor
    length: int


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------


def _backbone_shapes(dims: ModelDims) -> dict[str, tuple[int, ...]]:
    d, ffn = dims.d, dims.ffn
    shapes: dict[str, tuple[int, ...]] = {
        "embed/token": (dims.vocab, d),
        "embed/pos": (dims.max_pos, d),
    }

    def attn(prefix: str) -> None:
        for w in ("Wq", "Wk", "Wv", "Wo"):
            shapes[f"{prefix}/{w}"] = (d, d)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[f"{prefix}/{b}"] = (d,)

    def ln(prefix: str) -> None:
        shapes[f"{prefix}/gamma"] = (d,)
        shapes[f"{prefix}/beta"] = (d,)

    for i in range(dims.layers):
        ln(f"enc{i}/ln1")
        attn(f"enc{i}/self")
        ln(f"enc{i}/ln2")
        shapes[f"enc{i}/ffn/W1"] = (d, ffn)
        shapes[f"enc{i}/ffn/b1"] = (ffn,)
        shapes[f"enc{i}/ffn/W2"] = (ffn, d)
        shapes[f"enc{i}/ffn/b2"] = (d,)
    ln("enc/ln")
    for i in range(dims.layers):
        ln(f"dec{i}/ln1")
        attn(f"dec{i}/self")
        ln(f"dec{i}/ln2")
        attn(f"dec{i}/cross")
        ln(f"dec{i}/ln3")
        shapes[f"dec{i}/ffn/W1"] = (d, ffn)
        shapes[f"dec{i}/ffn/b1"] = (ffn,)
        shapes[f"dec{i}/ffn/W2"] = (ffn, d)
        shapes[f"dec{i}/ffn/b2"] = (d,)
    ln("dec/ln")
    return shapes


def init_backbone(dims: ModelDims, seed: int) -> BackboneParams:
    """Deterministic scaled-normal initialization; frozen flag starts unset."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in _backbone_shapes(dims).items():
        leaf = name.rsplit("/", 1)[-1]
        if leaf == "gamma":
            data = np.ones(shape)
        elif leaf in ("beta", "bq", "bk", "bv", "bo", "b1", "b2"):
            data = np.zeros(shape)
        elif name in ("embed/token", "embed/pos"):
            data = rng.normal(0.0, 0.02, shape)
        else:
            data = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
        params[name] = Tensor(data, requires_grad=True)
    return BackboneParams(dims, params)


def init_prompts(config: PromptConfig, backbone: BackboneParams, seed: int) -> PromptSet:
    """Prompt rows copy sampled vocabulary embeddings; inner rows are N(0, 0.05).

    Vocabulary rows are sampled without replacement while the vocabulary is
    large enough; otherwise sampling falls back to with-replacement with a
    warning.
    """
    import warnings

    rng = np.random.default_rng(seed)
    dims = backbone.dims
    embed = backbone.embed.data

    def vocab_rows(n: int) -> np.ndarray:
        if n == 0:
            return np.zeros((0, dims.d))
        if n <= dims.vocab:
            idx = rng.choice(dims.vocab, size=n, replace=False)
        else:
            warnings.warn(
                f"prompt length {n} exceeds vocab {dims.vocab}; sampling with replacement"
            )
            idx = rng.choice(dims.vocab, size=n, replace=True)
        return embed[idx].copy()

    p_en = Tensor(vocab_rows(config.effective_len_en), requires_grad=config.effective_len_en > 0)
    if config.shared and not config.encoder_only and not config.decoder_only:
        p_de = p_en
    else:
        p_de = Tensor(
            vocab_rows(config.effective_len_de), requires_grad=config.effective_len_de > 0
        )
    p_in = None
    if config.inner_rows > 0:
        p_in = Tensor(rng.normal(0.0, 0.05, (config.inner_rows, dims.d)), requires_grad=True)
    return PromptSet(p_en, p_de, p_in, config)


# --------------------------------------------------------------------------
# inner prompts
# --------------------------------------------------------------------------


def compute_n_max(
    corpus: list[Document], percentile: float = 0.85, unit: str = "sentence", k: int = 10
) -> int:
    """Largest unit count among the lowest ``percentile`` fraction of documents.

    The inner-prompt table then needs n_max + 1 rows (one per index 0..n_max-1
    plus the shared overflow row).
    """
    if not corpus:
        raise ValueError("corpus is empty")
    if not 0.0 < percentile <= 1.0:
        raise ValueError("percentile must be in (0, 1]")
    if unit == "sentence":
        counts = [len(doc.sentences) for doc in corpus]
    elif unit == "span_k":
        counts = [math.ceil(doc.flat_length / k) for doc in corpus]
    else:
        raise ValueError(f"unknown unit {unit!r}")
    counts.sort()
    take = math.ceil(percentile * len(counts))
    return counts[take - 1]


def assign_inner_prompts(doc: Document, config: PromptConfig) -> np.ndarray:
    """Inner-prompt row index for every flat token position."""
    if config.strategy == "none":
        raise ConfigError("no inner prompts under strategy 'none'")
    idx = np.empty(doc.flat_length, dtype=np.int64)
    if config.strategy == "fixed_k":
        spans = np.arange(doc.flat_length) // config.k
        idx[:] = np.minimum(spans, config.n_max)
        return idx
    offset = 0
    for i, sent in enumerate(doc.sentences):
        if config.strategy == "interval":
            row = i % 2
        else:  # sequential
            row = min(i, config.n_max)
        idx[offset : offset + len(sent)] = row
        offset += len(sent)
    return idx


# --------------------------------------------------------------------------
# transformer forward
# --------------------------------------------------------------------------


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, w), b)


def _attention(
    q_in: Tensor,
    kv_in: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    heads: int,
    mask: np.ndarray | None = None,
    capture: list[np.ndarray] | None = None,
) -> Tensor:
    d = q_in.data.shape[-1]
    dh = d // heads
    tq, tk = q_in.data.shape[0], kv_in.data.shape[0]
    q = _linear(q_in, params[f"{prefix}/Wq"], params[f"{prefix}/bq"])
    k = _linear(kv_in, params[f"{prefix}/Wk"], params[f"{prefix}/bk"])
    v = _linear(kv_in, params[f"{prefix}/Wv"], params[f"{prefix}/bv"])
    q = ad.transpose(ad.reshape(q, (tq, heads, dh)), (1, 0, 2))
    k = ad.transpose(ad.reshape(k, (tk, heads, dh)), (1, 0, 2))
    v = ad.transpose(ad.reshape(v, (tk, heads, dh)), (1, 0, 2))
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    if mask is not None:
        scores = ad.add(scores, mask)
    probs = ad.softmax(scores)
    if capture is not None:
        capture.append(probs.data.copy())
    out = ad.matmul(probs, v)
    out = ad.reshape(ad.transpose(out, (1, 0, 2)), (tq, d))
    return _linear(out, params[f"{prefix}/Wo"], params[f"{prefix}/bo"])


def _ffn(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    h = ad.gelu(_linear(x, params[f"{prefix}/W1"], params[f"{prefix}/b1"]))
    return _linear(h, params[f"{prefix}/W2"], params[f"{prefix}/b2"])


def _causal_mask(t: int) -> np.ndarray:
    return np.triu(np.full((t, t), -1e9), k=1)


def compose_encoder_input(
    doc: Document, prompts: PromptSet, backbone: BackboneParams, config: PromptConfig
) -> Tensor:
    """[P_en ; source token embeddings], with positions and inner prompts added.

    Prompt rows take positions 0..len_en-1; token at flat position t takes
    position len_en + t plus its inner-prompt row (when a strategy is set).
    """
    dims = backbone.dims
    len_en = config.effective_len_en
    flat = np.asarray(doc.flat, dtype=np.int64)
    if len_en + flat.size > dims.max_pos:
        raise LengthOverflowError(
            f"encoder length {len_en + flat.size} exceeds max_pos {dims.max_pos}"
        )
    tok = ad.take_rows(backbone.embed, flat)
    pos = ad.take_rows(backbone.pos, np.arange(len_en, len_en + flat.size))
    x = ad.add(tok, pos)
    if config.strategy != "none":
        if prompts.p_in is None:
            raise ConfigError(f"prompt set has no inner table for strategy {config.strategy!r}")
        inner = ad.take_rows(prompts.p_in, assign_inner_prompts(doc, config))
        x = ad.add(x, inner)
    if len_en > 0:
        pe = ad.add(prompts.p_en, ad.take_rows(backbone.pos, np.arange(len_en)))
        x = ad.concat_rows([pe, x])
    return x


def encode_source(
    backbone: BackboneParams, prompts: PromptSet, config: PromptConfig, src: Document
) -> EncodedSource:
    dims = backbone.dims
    p = backbone.params
    x = compose_encoder_input(src, prompts, backbone, config)
    for i in range(dims.layers):
        h = ad.layer_norm(x, p[f"enc{i}/ln1/gamma"], p[f"enc{i}/ln1/beta"])
        x = ad.add(x, _attention(h, h, p, f"enc{i}/self", dims.heads))
        h = ad.layer_norm(x, p[f"enc{i}/ln2/gamma"], p[f"enc{i}/ln2/beta"])
        x = ad.add(x, _ffn(h, p, f"enc{i}/ffn"))
    memory = ad.layer_norm(x, p["enc/ln/gamma"], p["enc/ln/beta"])
    return EncodedSource(memory, memory.data.shape[0])


def decode_logits(
    backbone: BackboneParams,
    prompts: PromptSet,
    config: PromptConfig,
    enc: EncodedSource,
    tgt_prefix,
    capture_attention: bool = False,
) -> tuple[Tensor, list[np.ndarray] | None]:
    """Run the decoder on [P_de ; BOS ; tgt_prefix].

    Returns logits for the len(tgt_prefix) + 1 positions that predict target
    tokens, plus per-layer cross-attention probabilities when requested.
    """
    dims = backbone.dims
    p = backbone.params
    len_de = config.effective_len_de
    prefix = list(tgt_prefix)
    t_dec = len_de + 1 + len(prefix)
    if t_dec > dims.max_pos:
        raise LengthOverflowError(f"decoder length {t_dec} exceeds max_pos {dims.max_pos}")

    ids = np.asarray([BOS_ID] + prefix, dtype=np.int64)
    tok = ad.take_rows(backbone.embed, ids)
    pos = ad.take_rows(backbone.pos, np.arange(len_de, t_dec))
    x = ad.add(tok, pos)
    if len_de > 0:
        pd = ad.add(prompts.p_de, ad.take_rows(backbone.pos, np.arange(len_de)))
        x = ad.concat_rows([pd, x])

    mask = _causal_mask(t_dec)
    capture: list[np.ndarray] | None = [] if capture_attention else None
    for i in range(dims.layers):
        h = ad.layer_norm(x, p[f"dec{i}/ln1/gamma"], p[f"dec{i}/ln1/beta"])
        x = ad.add(x, _attention(h, h, p, f"dec{i}/self", dims.heads, mask=mask))
        h = ad.layer_norm(x, p[f"dec{i}/ln2/gamma"], p[f"dec{i}/ln2/beta"])
        x = ad.add(x, _attention(h, enc.memory, p, f"dec{i}/cross", dims.heads, capture=capture))
        h = ad.layer_norm(x, p[f"dec{i}/ln3/gamma"], p[f"dec{i}/ln3/beta"])
        x = ad.add(x, _ffn(h, p, f"dec{i}/ffn"))
    x = ad.layer_norm(x, p["dec/ln/gamma"], p["dec/ln/beta"])

    predict = ad.take_rows(x, np.arange(len_de, t_dec))
    logits = ad.matmul(predict, ad.transpose(backbone.embed, (1, 0)))
    return logits, capture


def forward(
    backbone: BackboneParams,
    prompts: PromptSet,
    config: PromptConfig,
    src: Document,
    tgt_prefix,
) -> ForwardResult:
    """Full prompted forward pass with cross-attention capture.

    Logits have len(tgt_prefix) + 1 rows: the prediction after BOS and after
    each prefix token. The attention record covers every decoder position
    (prompts, BOS, prefix) against every encoder position (prompts, source).
    """
    dims = backbone.dims
    enc = encode_source(backbone, prompts, config, src)
    logits, capture = decode_logits(
        backbone, prompts, config, enc, tgt_prefix, capture_attention=True
    )
    assert capture is not None
    matrix = np.mean(np.stack(capture), axis=(0, 1))

    len_en = config.effective_len_en
    len_de = config.effective_len_de
    n_src = len(src.flat)
    n_prefix = len(list(tgt_prefix))
    row_labels = tuple(
        [f"P_de[{i}]" for i in range(len_de)]
        + ["BOS"]
        + [f"y[{j}]" for j in range(1, n_prefix + 1)]
    )
    col_labels = tuple(
        [f"P_en[{i}]" for i in range(len_en)] + [f"x[{j}]" for j in range(1, n_src + 1)]
    )
    record = AttentionRecord(
        matrix=matrix,
        row_labels=row_labels,
        col_labels=col_labels,
        len_de=len_de,
        len_en=len_en,
        layers=dims.layers,
        heads=dims.heads,
    )
    return ForwardResult(logits=logits, attention=record)


# --------------------------------------------------------------------------
# accounting and checkpoints
# --------------------------------------------------------------------------


def count_trainable_params(
    config: PromptConfig, d: int, mode: str = "prompt_only", backbone: BackboneParams | None = None
) -> int:
    """Number of tuned scalars: prompt rows times width, plus the backbone in full mode."""
    len_de = 0 if config.shared else config.effective_len_de
    prompt_params = d * (config.effective_len_en + len_de + config.inner_rows)
    if mode == "prompt_only":
        return prompt_params
    if mode == "full_model":
        if backbone is None:
            raise ConfigError("full_model accounting needs the backbone")
        return backbone.size() + prompt_params
    raise ConfigError(f"unknown mode {mode!r}")


CHECKPOINT_VERSION = 1


def save_checkpoint(path, backbone: BackboneParams, prompts: PromptSet) -> None:
    arrays = {f"backbone/{name}": t.data for name, t in backbone.params.items()}
    arrays["prompts/P_en"] = prompts.p_en.data
    arrays["prompts/P_de"] = prompts.p_de.data
    if prompts.p_in is not None:
        arrays["prompts/P_in"] = prompts.p_in.data
    meta = {
        "version": CHECKPOINT_VERSION,
        "dims": asdict(backbone.dims),
        "prompt_config": asdict(prompts.config),
        "frozen": backbone.frozen,
    }
    np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[BackboneParams, PromptSet]:
    """Rebuild backbone and prompts, rejecting any dimension mismatch."""
    with np.load(path, allow_pickle=False) as npz:
        try:
            meta = json.loads(str(npz["__meta__"]))
        except KeyError as exc:
            raise CheckpointError(f"{path}: missing metadata header") from exc
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {meta.get('version')}")
        dims = ModelDims(**meta["dims"])
        config = PromptConfig(**meta["prompt_config"])

        params: dict[str, Tensor] = {}
        for name, shape in _backbone_shapes(dims).items():
            key = f"backbone/{name}"
            if key not in npz:
                raise CheckpointError(f"{path}: missing tensor {key}")
            data = npz[key]
            if data.shape != shape:
                raise CheckpointError(f"{path}: {key} has shape {data.shape}, expected {shape}")
            params[name] = Tensor(data, requires_grad=True)
        backbone = BackboneParams(dims, params)
        if meta.get("frozen"):
            backbone.freeze()

        def prompt_tensor(key: str, rows: int) -> Tensor:
            data = npz[key]
            if data.shape != (rows, dims.d):
                raise CheckpointError(
                    f"{path}: {key} has shape {data.shape}, expected {(rows, dims.d)}"
                )
            return Tensor(data, requires_grad=rows > 0)

        p_en = prompt_tensor("prompts/P_en", config.effective_len_en)
        if config.shared and not config.encoder_only and not config.decoder_only:
            p_de = p_en
        else:
            p_de = prompt_tensor("prompts/P_de", config.effective_len_de)
        p_in = None
        if config.inner_rows > 0:
            if "prompts/P_in" not in npz:
                raise CheckpointError(f"{path}: missing tensor prompts/P_in")
            p_in = prompt_tensor("prompts/P_in", config.inner_rows)
    return backbone, PromptSet(p_en, p_de, p_in, config)
