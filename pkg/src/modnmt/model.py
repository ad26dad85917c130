"""Architecture registry: six parameter-sharing layouts over shared building blocks.

Kinds
-----
F  fully shared: one encoder, one decoder, joint vocabulary, target-tag token
N  fully modular: one encoder and one decoder per language
E  shared encoder, per-language decoders
D  per-language encoders, shared decoder
T  per-language encoders (n-1 layers) + one shared Transformer layer bridge
L  per-language encoders (n-1 layers) + one shared fixed-size attention bridge

A model is a registry mapping (role, scope) keys to parameter sets. Routing a
direction resolves each pipeline stage to its key; shared-scope stages hand
every direction the same parameter objects, which is the whole point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .layers import (
    FsabParams,
    TransformerLayerParams,
    decoder_layer_forward,
    encoder_layer_forward,
    fsab_forward,
    sinusoidal_positions,
)
from .tensor import Tensor, add, cross_entropy, embedding, layer_norm, matmul, mul, transpose

ARCHITECTURE_KINDS = ("F", "N", "E", "D", "T", "L")
SHARED = "shared"

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"

ROLE_EMBEDDING = "embedding"
ROLE_ENCODER = "encoder-stack"
ROLE_BRIDGE = "bridge-layer"
ROLE_DECODER = "decoder-stack"
ROLE_HEAD = "output-head"


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class ModuleKey:
    role: str
    scope: str  # SHARED or a language id

    def __str__(self):
        return f"{self.role}|{self.scope}"

    @classmethod
    def parse(cls, text):
        role, scope = text.split("|", 1)
        return cls(role, scope)


@dataclass(frozen=True)
class ModelDims:
    d: int = 64
    d_ff: int = 256
    heads: int = 4
    enc_layers: int = 6
    dec_layers: int = 6
    k: int = 50
    d_a: int | None = None

    @property
    def bridge_hidden(self):
        return self.d if self.d_a is None else self.d_a


class Vocab:
    """Token <-> id table with fixed special tokens (pad=0, bos=1, eos=2)."""

    def __init__(self, surface_tokens):
        self.tokens = [PAD, BOS, EOS] + list(surface_tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    pad_id, bos_id, eos_id = 0, 1, 2

    def __len__(self):
        return len(self.tokens)

    def encode(self, tokens):
        try:
            return [self.index[t] for t in tokens]
        except KeyError as e:
            raise ValueError(f"token {e.args[0]!r} not in vocabulary") from None

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    @property
    def surface_tokens(self):
        return self.tokens[3:]


def target_tag(lang):
    return f"<to:{lang}>"


# ---------------------------------------------------------------------------
# parameter sets


@dataclass
class EmbeddingParams:
    weight: Tensor  # (V, d); doubles as the tied output head

    @classmethod
    def create(cls, rng, vocab_size, d):
        w = rng.normal(0.0, d ** -0.5, size=(vocab_size, d))
        return cls(weight=Tensor(w, requires_grad=True))

    def tensors(self):
        return {"weight": self.weight}


@dataclass
class StackParams:
    """A stack of Transformer layers closed by a final layer norm."""

    layers: list
    ln_g: Tensor
    ln_b: Tensor

    @classmethod
    def create(cls, rng, n_layers, dims, cross_attention):
        layers = [
            TransformerLayerParams.create(rng, dims.d, dims.d_ff, dims.heads, cross_attention)
            for _ in range(n_layers)
        ]
        return cls(
            layers=layers,
            ln_g=Tensor(np.ones(dims.d), requires_grad=True),
            ln_b=Tensor(np.zeros(dims.d), requires_grad=True),
        )

    def tensors(self):
        named = {}
        for i, layer in enumerate(self.layers):
            for name, t in layer.tensors().items():
                named[f"layer{i}.{name}"] = t
        named["ln_g"] = self.ln_g
        named["ln_b"] = self.ln_b
        return named


def _paramset_tensors(pset):
    return pset.tensors()


@dataclass
class ModularModel:
    kind: str
    dims: ModelDims
    languages: tuple
    registry: dict                     # ModuleKey -> parameter set
    vocabs: dict                       # language id -> Vocab; plus SHARED entry for F
    seed: int
    tied_embeddings: bool = True
    use_target_tag: bool = True        # F only: prepend <to:lang> to the source
    bridge_memory_only: bool = True    # T/L decoders cross-attend to bridge output alone
    meta: dict = field(default_factory=dict)

    # -- structure ---------------------------------------------------------

    def vocab_for(self, lang):
        return self.vocabs[SHARED] if self.kind == "F" else self.vocabs[lang]

    def route(self, src, tgt):
        """Ordered pipeline of module keys for one translation direction."""
        for lang in (src, tgt):
            if lang not in self.languages:
                raise ValueError(f"unknown language {lang!r}; model covers {self.languages}")
        kind = self.kind
        enc_scope = SHARED if kind in ("F", "E") else src
        dec_scope = SHARED if kind in ("F", "D") else tgt
        emb_src = SHARED if kind == "F" else src
        emb_tgt = SHARED if kind == "F" else tgt
        pipeline = [
            ModuleKey(ROLE_EMBEDDING, emb_src),
            ModuleKey(ROLE_ENCODER, enc_scope),
        ]
        if kind in ("T", "L"):
            pipeline.append(ModuleKey(ROLE_BRIDGE, SHARED))
        pipeline += [
            ModuleKey(ROLE_EMBEDDING, emb_tgt),
            ModuleKey(ROLE_DECODER, dec_scope),
            ModuleKey(ROLE_HEAD, emb_tgt),
        ]
        return pipeline

    def parameters_for(self, keys):
        """Unique parameter tensors behind a set of module keys."""
        seen, out = set(), []
        for key in keys:
            for t in _paramset_tensors(self.registry[key]).values():
                if id(t) not in seen:
                    seen.add(id(t))
                    out.append(t)
        return out

    def all_parameters(self):
        return self.parameters_for(self.registry.keys())

    # -- forward -----------------------------------------------------------

    def _embed(self, emb, ids):
        x = mul(embedding(emb.weight, ids), np.sqrt(self.dims.d))
        return add(x, sinusoidal_positions(ids.shape[-1], self.dims.d))

    def encode_source(self, direction, src_ids, src_pad):
        """Run the encoder side; returns (memory, memory_pad_mask)."""
        src, tgt = direction
        pipe = self.route(src, tgt)
        emb = self.registry[pipe[0]]
        enc = self.registry[pipe[1]]
        x = self._embed(emb, src_ids)
        for layer in enc.layers:
            x = encoder_layer_forward(layer, x, src_pad)
        x = layer_norm(x, enc.ln_g, enc.ln_b)
        if self.kind == "T":
            bridge = self.registry[ModuleKey(ROLE_BRIDGE, SHARED)]
            x = encoder_layer_forward(bridge.layers[0], x, src_pad)
            x = layer_norm(x, bridge.ln_g, bridge.ln_b)
            return x, src_pad
        if self.kind == "L":
            bridge = self.registry[ModuleKey(ROLE_BRIDGE, SHARED)]
            x = fsab_forward(bridge, x, src_pad)
            return x, np.zeros(x.shape[:-1], dtype=bool)
        return x, src_pad

    def decode_logits(self, direction, memory, mem_pad, tgt_in_ids, tgt_pad):
        src, tgt = direction
        emb_tgt = self.registry[ModuleKey(ROLE_EMBEDDING, SHARED if self.kind == "F" else tgt)]
        dec = self.registry[ModuleKey(ROLE_DECODER, SHARED if self.kind in ("F", "D") else tgt)]
        head = self.registry[ModuleKey(ROLE_HEAD, SHARED if self.kind == "F" else tgt)]
        y = self._embed(emb_tgt, tgt_in_ids)
        for layer in dec.layers:
            y = decoder_layer_forward(layer, y, memory, tgt_pad, mem_pad)
        y = layer_norm(y, dec.ln_g, dec.ln_b)
        return matmul(y, transpose(head.weight))

    def prepare_source(self, direction, src_tokens):
        """Token list -> id list (adds eos; F prepends the target-tag token)."""
        src, tgt = direction
        vocab = self.vocab_for(src)
        ids = vocab.encode(src_tokens) + [vocab.eos_id]
        if self.kind == "F" and self.use_target_tag:
            ids = [vocab.index[target_tag(tgt)]] + ids
        return ids

    def forward(self, direction, src_batch, tgt_batch):
        """Teacher-forced loss and logits for one batch of token sequences.

        Gradients flow into exactly the modules named by ``route(direction)``.
        """
        src, tgt = direction
        if len(src_batch) != len(tgt_batch):
            raise ValueError(f"batch size mismatch: {len(src_batch)} vs {len(tgt_batch)}")
        vocab_tgt = self.vocab_for(tgt)
        src_ids, src_pad = pad_batch([self.prepare_source(direction, s) for s in src_batch])
        tgt_ids = [vocab_tgt.encode(t) for t in tgt_batch]
        dec_in, dec_pad = pad_batch([[vocab_tgt.bos_id] + t for t in tgt_ids])
        labels, label_pad = pad_batch([t + [vocab_tgt.eos_id] for t in tgt_ids])
        memory, mem_pad = self.encode_source(direction, src_ids, src_pad)
        logits = self.decode_logits(direction, memory, mem_pad, dec_in, dec_pad)
        loss = cross_entropy(logits, labels, mask=~label_pad)
        return loss, logits


def pad_batch(seqs, pad_id=0):
    """Right-pad id lists to a (B, T) int array plus a True-means-pad mask."""
    if not seqs:
        raise ValueError("empty batch")
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    mask = np.ones((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = False
    return ids, mask


# ---------------------------------------------------------------------------
# construction


def joint_vocabulary(vocabs, languages):
    """Union vocabulary with one target-tag token per language (F models)."""
    tags = [target_tag(l) for l in sorted(languages)]
    union = sorted(set(tok for v in vocabs.values() for tok in v.surface_tokens))
    return Vocab(tags + union)


def build_model(kind, vocabs, dims=ModelDims(), seed=0, tied_embeddings=True,
                use_target_tag=True):
    """Instantiate the module registry for one architecture kind.

    ``vocabs`` maps language id -> Vocab (or list of surface tokens). The
    module inventory follows the kind: see the module docstring.
    """
    if kind not in ARCHITECTURE_KINDS:
        raise ValueError(f"unknown architecture kind {kind!r}; expected one of {ARCHITECTURE_KINDS}")
    if len(vocabs) < 2:
        raise ValueError("a modular model needs at least two languages")
    vocabs = {
        lang: v if isinstance(v, Vocab) else Vocab(v) for lang, v in sorted(vocabs.items())
    }
    languages = tuple(sorted(vocabs))
    if kind in ("T", "L") and dims.enc_layers < 2:
        raise ValueError("bridge architectures need enc_layers >= 2 (n-1 specific + 1 shared)")

    rng = np.random.default_rng(seed)
    registry = {}

    def add_embedding(scope, vocab):
        key = ModuleKey(ROLE_EMBEDDING, scope)
        registry[key] = EmbeddingParams.create(rng, len(vocab), dims.d)
        head_key = ModuleKey(ROLE_HEAD, scope)
        if tied_embeddings:
            registry[head_key] = registry[key]
        else:
            registry[head_key] = EmbeddingParams.create(rng, len(vocab), dims.d)

    enc_specific_layers = dims.enc_layers - 1 if kind in ("T", "L") else dims.enc_layers

    if kind == "F":
        shared_vocab = joint_vocabulary(vocabs, languages)
        vocabs = dict(vocabs)
        vocabs[SHARED] = shared_vocab
        add_embedding(SHARED, shared_vocab)
        registry[ModuleKey(ROLE_ENCODER, SHARED)] = StackParams.create(
            rng, dims.enc_layers, dims, cross_attention=False)
        registry[ModuleKey(ROLE_DECODER, SHARED)] = StackParams.create(
            rng, dims.dec_layers, dims, cross_attention=True)
    else:
        for lang in languages:
            add_embedding(lang, vocabs[lang])
        enc_scopes = [SHARED] if kind == "E" else list(languages)
        dec_scopes = [SHARED] if kind == "D" else list(languages)
        for scope in enc_scopes:
            registry[ModuleKey(ROLE_ENCODER, scope)] = StackParams.create(
                rng, enc_specific_layers, dims, cross_attention=False)
        if kind == "T":
            registry[ModuleKey(ROLE_BRIDGE, SHARED)] = StackParams.create(
                rng, 1, dims, cross_attention=False)
        elif kind == "L":
            registry[ModuleKey(ROLE_BRIDGE, SHARED)] = FsabParams.create(
                rng, dims.d, k=dims.k, d_a=dims.bridge_hidden)
        for scope in dec_scopes:
            registry[ModuleKey(ROLE_DECODER, scope)] = StackParams.create(
                rng, dims.dec_layers, dims, cross_attention=True)

    return ModularModel(
        kind=kind,
        dims=dims,
        languages=languages,
        registry=registry,
        vocabs=vocabs,
        seed=seed,
        tied_embeddings=tied_embeddings,
        use_target_tag=use_target_tag,
    )


def count_parameters(model):
    """Exact scalar count per module key (tied keys report their shared set)."""
    return {
        key: sum(t.size for t in _paramset_tensors(pset).values())
        for key, pset in model.registry.items()
    }


def total_parameter_count(model):
    return sum(t.size for t in model.all_parameters())


# ---------------------------------------------------------------------------
# checkpointing

MAGIC = b"MODNMT1\n"


def _manifest(model):
    entries = []
    seen = {}
    for key in sorted(model.registry, key=str):
        pset = model.registry[key]
        if id(pset) in seen:
            entries.append({"key": str(key), "alias_of": seen[id(pset)]})
            continue
        seen[id(pset)] = str(key)
        params = [
            {"name": name, "shape": list(t.shape)}
            for name, t in sorted(_paramset_tensors(pset).items())
        ]
        entries.append({"key": str(key), "params": params})
    return entries


def checkpoint_save(model, path, budget_consumed=None):
    """Write a little-endian float64 blob with a JSON manifest header."""
    header = {
        "kind": model.kind,
        "dims": {
            "d": model.dims.d, "d_ff": model.dims.d_ff, "heads": model.dims.heads,
            "enc_layers": model.dims.enc_layers, "dec_layers": model.dims.dec_layers,
            "k": model.dims.k, "d_a": model.dims.d_a,
        },
        "languages": list(model.languages),
        "surface_vocabs": {l: model.vocabs[l].surface_tokens for l in model.languages},
        "seed": model.seed,
        "tied_embeddings": model.tied_embeddings,
        "use_target_tag": model.use_target_tag,
        "bridge_memory_only": model.bridge_memory_only,
        "budget_consumed": budget_consumed,
        "entries": _manifest(model),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for entry in header["entries"]:
            if "alias_of" in entry:
                continue
            pset = model.registry[ModuleKey.parse(entry["key"])]
            named = _paramset_tensors(pset)
            for p in entry["params"]:
                fh.write(np.ascontiguousarray(named[p["name"]].data, dtype="<f8").tobytes())


def checkpoint_load(path):
    """Rebuild a model from a checkpoint; bit-exact round trip with save."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
    n = int.from_bytes(raw[len(MAGIC): len(MAGIC) + 8], "little")
    head_start = len(MAGIC) + 8
    try:
        header = json.loads(raw[head_start: head_start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt manifest header ({e})") from None

    dims = ModelDims(**header["dims"])
    model = build_model(
        header["kind"],
        {l: header["surface_vocabs"][l] for l in header["languages"]},
        dims=dims,
        seed=header["seed"],
        tied_embeddings=header["tied_embeddings"],
        use_target_tag=header["use_target_tag"],
    )
    model.bridge_memory_only = header["bridge_memory_only"]
    model.meta["budget_consumed"] = header.get("budget_consumed")

    offset = head_start + n
    for entry in header["entries"]:
        key = ModuleKey.parse(entry["key"])
        if key not in model.registry:
            raise CheckpointError(f"{path}: manifest names unknown module {entry['key']}")
        if "alias_of" in entry:
            if model.registry[key] is not model.registry[ModuleKey.parse(entry["alias_of"])]:
                raise CheckpointError(
                    f"{path}: incompatible manifest at {entry['key']}: alias mismatch")
            continue
        named = _paramset_tensors(model.registry[key])
        for p in entry["params"]:
            t = named.get(p["name"])
            expect = f"{entry['key']}:{p['name']}"
            if t is None or list(t.shape) != p["shape"]:
                raise CheckpointError(f"{path}: incompatible manifest at {expect}")
            nbytes = int(np.prod(p["shape"])) * 8 if p["shape"] else 8
            chunk = raw[offset: offset + nbytes]
            if len(chunk) != nbytes:
                raise CheckpointError(f"{path}: truncated checkpoint at {expect}")
            t.data = np.frombuffer(chunk, dtype="<f8").reshape(p["shape"]).copy()
            offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after parameters")
    return model


def write_model_card(model, path, budget_consumed=None):
    """Plain-text card emitted beside each checkpoint."""
    lines = [
        f"kind: {model.kind}",
        f"languages: {', '.join(model.languages)}",
        f"dims: d={model.dims.d} d_ff={model.dims.d_ff} heads={model.dims.heads} "
        f"enc_layers={model.dims.enc_layers} dec_layers={model.dims.dec_layers} "
        f"k={model.dims.k} d_a={model.dims.bridge_hidden}",
        f"seed: {model.seed}",
        f"tied_embeddings: {model.tied_embeddings}",
        f"use_target_tag: {model.use_target_tag}",
        f"bridge_memory_only: {model.bridge_memory_only}",
        f"budget_consumed: {budget_consumed}",
        f"total_parameters: {total_parameter_count(model)}",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
