"""Synthetic multilingual parallel corpora with split closure and pivot direction sets.

Toy languages are deterministic bijective renderings of a shared latent
sequence: a substitution permutation over the latent alphabet, an ordering
transform, and optional affix tokens. References are therefore exact, which
makes BLEU meaningful at desk scale. Two domain profiles (different length
and symbol distributions) provide the out-of-distribution axis.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

ORDERING_TRANSFORMS = ("identity", "reversal", "rotation", "swap")


@dataclass(frozen=True)
class LanguageSpec:
    """Deterministic rendering rule for one toy language.

    ``substitution`` is a permutation over the latent alphabet; surface token
    i of the vocabulary renders latent symbol s where substitution[s] == i.
    """

    lang: str
    vocabulary: tuple          # surface token per latent symbol
    substitution: tuple        # permutation of range(alphabet)
    ordering: str              # one of ORDERING_TRANSFORMS
    rotation: int = 1          # used when ordering == "rotation"
    prefix: tuple = ()         # affix tokens, part of every rendered sentence
    suffix: tuple = ()

    def __post_init__(self):
        if self.ordering not in ORDERING_TRANSFORMS:
            raise ValueError(f"unknown ordering transform {self.ordering!r}")
        if sorted(self.substitution) != list(range(len(self.vocabulary))):
            raise ValueError(f"substitution for {self.lang} is not a permutation")

    def _order(self, symbols, inverse=False):
        seq = list(symbols)
        n = len(seq)
        if self.ordering == "identity" or n < 2:
            return seq
        if self.ordering == "reversal":
            return seq[::-1]
        if self.ordering == "rotation":
            r = self.rotation % n
            r = (n - r) if inverse else r
            return seq[r:] + seq[:r]
        # pairwise swap: (0,1)(2,3)...; self-inverse, odd tail stays put
        out = list(seq)
        for i in range(0, n - 1, 2):
            out[i], out[i + 1] = out[i + 1], out[i]
        return out

    def surface_tokens(self):
        """Every token this language can emit (vocabulary plus affixes)."""
        return list(self.vocabulary) + list(self.prefix) + list(self.suffix)

    def render(self, symbols):
        """Latent symbols -> surface tokens (deterministic, injective)."""
        body = [self.vocabulary[self.substitution[s]] for s in self._order(symbols)]
        return list(self.prefix) + body + list(self.suffix)

    def invert(self, tokens):
        """Surface tokens -> latent symbols; exact inverse of render."""
        body = list(tokens)
        if self.prefix:
            if tuple(body[: len(self.prefix)]) != self.prefix:
                raise ValueError(f"{self.lang}: missing prefix {self.prefix}")
            body = body[len(self.prefix):]
        if self.suffix:
            if tuple(body[len(body) - len(self.suffix):]) != self.suffix:
                raise ValueError(f"{self.lang}: missing suffix {self.suffix}")
            body = body[: len(body) - len(self.suffix)]
        token_to_sym = {self.vocabulary[self.substitution[s]]: s
                        for s in range(len(self.vocabulary))}
        try:
            symbols = [token_to_sym[t] for t in body]
        except KeyError as e:
            raise ValueError(f"{self.lang}: token {e.args[0]!r} not renderable") from None
        return self._order(symbols, inverse=True)


@dataclass(frozen=True)
class DomainProfile:
    """Latent-symbol and length distribution; the OOD axis between corpora."""

    name: str
    min_len: int
    max_len: int
    zipf_a: float = 1.1
    shift: int = 0  # rotates the symbol ranks, shifting the Zipf mass

    def symbol_probs(self, alphabet):
        ranks = (np.arange(alphabet) + self.shift) % alphabet
        p = 1.0 / (ranks + 1.0) ** self.zipf_a
        return p / p.sum()

    def sample_latent(self, rng, alphabet):
        n = int(rng.integers(self.min_len, self.max_len + 1))
        return tuple(rng.choice(alphabet, size=n, p=self.symbol_probs(alphabet)))


@dataclass(frozen=True)
class SentencePair:
    src_lang: str
    tgt_lang: str
    src_tokens: tuple
    tgt_tokens: tuple
    latent_id: str
    domain: str = ""

    @property
    def direction(self):
        return (self.src_lang, self.tgt_lang)


@dataclass
class CorpusSplits:
    train: list
    validation: list
    test: list
    component_map: dict           # latent_id -> split name
    oversized: list = field(default_factory=list)

    def pairs_for(self, split, direction=None):
        pairs = getattr(self, split)
        if direction is None:
            return pairs
        return [p for p in pairs if p.direction == tuple(direction)]


@dataclass(frozen=True)
class DirectionSet:
    translation: tuple            # ordered (src, tgt) pairs
    autoencoding: tuple           # (l, l) pairs

    @property
    def all_directions(self):
        return self.translation + self.autoencoding

    def is_seen(self, direction):
        return tuple(direction) in set(self.translation)


# ---------------------------------------------------------------------------
# defaults


DEFAULT_LANGUAGES = ("la", "lb", "lc", "ld", "le", "lf")


def default_language_specs(languages=DEFAULT_LANGUAGES, alphabet=32, seed=7):
    """Six toy languages differing in substitution and word order."""
    orderings = [
        ("identity", 1), ("reversal", 1), ("rotation", 1),
        ("rotation", 3), ("swap", 1), ("identity", 1),
    ]
    rng = np.random.default_rng(seed)
    specs = []
    for i, lang in enumerate(languages):
        ordering, rot = orderings[i % len(orderings)]
        affixed = i % len(orderings) == 5
        specs.append(LanguageSpec(
            lang=lang,
            vocabulary=tuple(f"{lang}{j:02d}" for j in range(alphabet)),
            substitution=tuple(int(x) for x in rng.permutation(alphabet)),
            ordering=ordering,
            rotation=rot,
            prefix=(f"{lang}P",) if affixed else (),
            suffix=(f"{lang}S",) if affixed else (),
        ))
    return specs


def default_domains():
    return (
        DomainProfile(name="alpha", min_len=5, max_len=12, zipf_a=1.1, shift=0),
        DomainProfile(name="beta", min_len=10, max_len=24, zipf_a=1.1, shift=16),
    )


@dataclass(frozen=True)
class CorpusSizes:
    """Latent-sentence counts per domain; with full language coverage these
    equal pair counts per translation direction."""

    train: int = 20000
    validation: int = 500
    test: int = 1000
    autoencoding: int = 1000

    @property
    def translation_total(self):
        return self.train + self.validation + self.test

    @property
    def fractions(self):
        t = self.translation_total
        return (self.train / t, self.validation / t, self.test / t)


# ---------------------------------------------------------------------------
# generation


def generate_corpus(specs, domains, sizes=CorpusSizes(), seed=0):
    """Render aligned pairs for every ordered language pair plus autoencoding.

    Every latent sentence is rendered in all languages; translation and
    autoencoding draw from disjoint latent pools. Deterministic under seed.
    """
    if len(specs) < 2:
        raise ValueError("need at least two language specs")
    alphabet = len(specs[0].vocabulary)
    rng = np.random.default_rng(seed)
    by_lang = {s.lang: s for s in sorted(specs, key=lambda s: s.lang)}
    langs = sorted(by_lang)

    pairs = []
    for domain in domains:
        latents = _sample_unique_latents(
            rng, domain, alphabet, sizes.translation_total + sizes.autoencoding)
        translation = latents[: sizes.translation_total]
        autoenc = latents[sizes.translation_total:]
        for idx, symbols in enumerate(translation):
            lid = f"{domain.name}:t{idx:06d}"
            rendered = {l: tuple(by_lang[l].render(symbols)) for l in langs}
            for src in langs:
                for tgt in langs:
                    if src != tgt:
                        pairs.append(SentencePair(
                            src, tgt, rendered[src], rendered[tgt], lid, domain.name))
        for idx, symbols in enumerate(autoenc):
            lid = f"{domain.name}:a{idx:06d}"
            for lang in langs:
                toks = tuple(by_lang[lang].render(symbols))
                pairs.append(SentencePair(lang, lang, toks, toks, lid, domain.name))
    return pairs


def _sample_unique_latents(rng, domain, alphabet, count):
    seen, out = set(), []
    attempts = 0
    while len(out) < count:
        symbols = domain.sample_latent(rng, alphabet)
        attempts += 1
        if attempts > 50 * count + 1000:
            raise ValueError(f"domain {domain.name}: cannot draw {count} unique latents")
        if symbols not in seen:
            seen.add(symbols)
            out.append(symbols)
    return out


# ---------------------------------------------------------------------------
# splitting


def split_with_closure(pairs, fractions=(0.90, 0.05, 0.05), seed=0):
    """Assign pairs to train/validation/test with sentence-closure.

    Connected components of the sentence-pair graph (latent ids and surface
    sentences as nodes, pairs as edges) move atomically, so no sentence ever
    straddles a split. Components larger than the test or validation budget
    are reported and assigned to train.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    f_train, f_val, f_test = fractions

    parent = {}

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(a, b):
        for n in (a, b):
            parent.setdefault(n, n)
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    for p in pairs:
        # sentence nodes are exact token tuples: a sentence shared between two
        # pairs drags both into one component no matter which side it is on
        lat = ("latent", p.latent_id)
        union(lat, ("sent", p.src_tokens))
        union(lat, ("sent", p.tgt_tokens))

    comp_pairs = {}
    for i, p in enumerate(pairs):
        comp_pairs.setdefault(find(("latent", p.latent_id)), []).append(i)

    roots = sorted(comp_pairs, key=str)
    rng = np.random.default_rng(seed)
    rng.shuffle(roots)

    n = len(pairs)
    test_target = int(round(f_test * n))
    val_target = int(round(f_val * n))
    assignment = {}
    counts = {"test": 0, "validation": 0}
    oversized = []
    for root in roots:
        size = len(comp_pairs[root])
        if counts["test"] < test_target:
            if size > test_target:
                oversized.append(root)
                assignment[root] = "train"
            else:
                assignment[root] = "test"
                counts["test"] += size
            continue
        if counts["validation"] < val_target:
            if size > val_target:
                oversized.append(root)
                assignment[root] = "train"
            else:
                assignment[root] = "validation"
                counts["validation"] += size
            continue
        assignment[root] = "train"

    buckets = {"train": [], "validation": [], "test": []}
    component_map = {}
    for p in pairs:
        split = assignment[find(("latent", p.latent_id))]
        buckets[split].append(p)
        previous = component_map.setdefault(p.latent_id, split)
        assert previous == split
    if oversized:
        warnings.warn(
            f"{len(oversized)} components exceeded a split budget and were kept in train")
    return CorpusSplits(
        train=buckets["train"],
        validation=buckets["validation"],
        test=buckets["test"],
        component_map=component_map,
        oversized=[str(r) for r in oversized],
    )


# ---------------------------------------------------------------------------
# direction sets


def build_direction_set(languages, pivot=None):
    """All ordered directions, or only those involving a pivot language.

    Autoencoding directions (l, l) are always appended: they are what makes
    zero-shot routing possible for the modular kinds.
    """
    langs = sorted(languages)
    if pivot is not None and pivot not in langs:
        raise ValueError(f"pivot {pivot!r} not among languages {langs}")
    translation = [
        (a, b) for a in langs for b in langs
        if a != b and (pivot is None or pivot in (a, b))
    ]
    return DirectionSet(
        translation=tuple(translation),
        autoencoding=tuple((l, l) for l in langs),
    )


# ---------------------------------------------------------------------------
# external text ingestion


def ingest_aligned_text(src_path, tgt_path, src_lang, tgt_lang):
    """Line-aligned UTF-8 files -> whitespace-tokenized sentence pairs.

    Latent ids come from exact source-string identity, so duplicated source
    sentences share an id and the closure rule groups their pairs.
    """
    with open(src_path, encoding="utf-8") as fh:
        src_lines = fh.read().splitlines()
    with open(tgt_path, encoding="utf-8") as fh:
        tgt_lines = fh.read().splitlines()
    if len(src_lines) != len(tgt_lines):
        raise ValueError(
            f"line count mismatch: {src_path} has {len(src_lines)}, "
            f"{tgt_path} has {len(tgt_lines)}")
    latent_ids = {}
    pairs = []
    skipped = 0
    for s, t in zip(src_lines, tgt_lines):
        if not s.strip() or not t.strip():
            skipped += 1
            continue
        lid = latent_ids.setdefault(s, f"ingest:{len(latent_ids):06d}")
        pairs.append(SentencePair(
            src_lang, tgt_lang, tuple(s.split()), tuple(t.split()), lid, "ingested"))
    if skipped:
        warnings.warn(f"skipped {skipped} pairs with an empty line")
    return pairs


# ---------------------------------------------------------------------------
# persistence


def corpus_manifest(specs, domains, sizes, seed):
    """Everything needed to regenerate the corpus bit-for-bit."""
    return {
        "seed": seed,
        "autoencoding_latents_disjoint": True,
        "languages": [
            {
                "lang": s.lang,
                "vocabulary": list(s.vocabulary),
                "substitution": list(s.substitution),
                "ordering": s.ordering,
                "rotation": s.rotation,
                "prefix": list(s.prefix),
                "suffix": list(s.suffix),
            }
            for s in specs
        ],
        "domains": [
            {
                "name": d.name, "min_len": d.min_len, "max_len": d.max_len,
                "zipf_a": d.zipf_a, "shift": d.shift,
            }
            for d in domains
        ],
        "sizes": {
            "train": sizes.train, "validation": sizes.validation,
            "test": sizes.test, "autoencoding": sizes.autoencoding,
        },
    }


def specs_from_manifest(manifest):
    specs = [
        LanguageSpec(
            lang=s["lang"],
            vocabulary=tuple(s["vocabulary"]),
            substitution=tuple(s["substitution"]),
            ordering=s["ordering"],
            rotation=s["rotation"],
            prefix=tuple(s["prefix"]),
            suffix=tuple(s["suffix"]),
        )
        for s in manifest["languages"]
    ]
    domains = [DomainProfile(**d) for d in manifest["domains"]]
    sizes = CorpusSizes(**manifest["sizes"])
    return specs, domains, sizes


def save_corpus(path_prefix, splits_by_domain, manifest):
    """Write <prefix>.manifest.json and <prefix>.pairs.tsv (sorted, reproducible)."""
    with open(f"{path_prefix}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    rows = []
    for domain in sorted(splits_by_domain):
        splits = splits_by_domain[domain]
        for split in ("train", "validation", "test"):
            for p in splits.pairs_for(split):
                rows.append((domain, split, p.latent_id, p.src_lang, p.tgt_lang,
                             " ".join(p.src_tokens), " ".join(p.tgt_tokens)))
    rows.sort()
    with open(f"{path_prefix}.pairs.tsv", "w", encoding="utf-8") as fh:
        fh.write("domain\tsplit\tlatent_id\tsrc_lang\ttgt_lang\tsrc\ttgt\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")


def load_corpus(path_prefix):
    """Read back what save_corpus wrote: (manifest, {domain: CorpusSplits})."""
    with open(f"{path_prefix}.manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    buckets = {}
    with open(f"{path_prefix}.pairs.tsv", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("domain\t"):
            raise ValueError(f"{path_prefix}.pairs.tsv: unexpected header")
        for line in fh:
            domain, split, lid, src_lang, tgt_lang, src, tgt = line.rstrip("\n").split("\t")
            pair = SentencePair(
                src_lang, tgt_lang, tuple(src.split()), tuple(tgt.split()), lid, domain)
            buckets.setdefault(domain, {"train": [], "validation": [], "test": []})
            buckets[domain][split].append(pair)
    splits_by_domain = {}
    for domain, b in buckets.items():
        cmap = {}
        for split in ("train", "validation", "test"):
            for p in b[split]:
                cmap[p.latent_id] = split
        splits_by_domain[domain] = CorpusSplits(
            train=b["train"], validation=b["validation"], test=b["test"],
            component_map=cmap)
    return manifest, splits_by_domain
