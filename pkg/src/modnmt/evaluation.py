"""Greedy decoding, corpus BLEU, and the seen/unseen x in-distribution/OOD grid.

BLEU here is 4-gram corpus BLEU: geometric mean of modified n-gram precisions
with uniform weights times a brevity penalty. Zero-match precisions are
substituted with 0.1 / denominator so short desk-scale corpora yield nonzero
finite scores; the same rule is applied to every comparison.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .model import checkpoint_load, pad_batch
from .tensor import no_grad

TSV_HEADER = ("kind", "train_mode", "train_domain", "test_domain",
              "src", "tgt", "seen", "ood", "seed", "bleu")


@dataclass(frozen=True)
class EvalCell:
    kind: str
    train_mode: str
    train_domain: str
    test_domain: str
    src: str
    tgt: str
    seen: bool
    ood: bool
    seed: int
    bleu: float | None  # None marks an absent cell (e.g. missing checkpoint)

    @property
    def direction(self):
        return (self.src, self.tgt)


# ---------------------------------------------------------------------------
# decoding


def decode_batch(model, direction, src_batch, max_len=64):
    """Greedy-decode a batch in lockstep; returns (hypotheses, n_truncated)."""
    src, tgt = direction
    vocab = model.vocab_for(tgt)
    forbidden = [vocab.pad_id, vocab.bos_id]
    if model.kind == "F":
        from .model import target_tag
        forbidden += [vocab.index[target_tag(l)] for l in model.languages]

    with no_grad():
        src_ids, src_pad = pad_batch(
            [model.prepare_source(direction, s) for s in src_batch])
        memory, mem_pad = model.encode_source(direction, src_ids, src_pad)
        n = len(src_batch)
        ids = np.full((n, 1), vocab.bos_id, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        for _ in range(max_len):
            tgt_pad = ids == vocab.pad_id
            logits = model.decode_logits(direction, memory, mem_pad, ids, tgt_pad)
            last = logits.data[:, -1, :].copy()
            last[:, forbidden] = -np.inf
            nxt = last.argmax(axis=-1)
            nxt[done] = vocab.pad_id
            ids = np.concatenate([ids, nxt[:, None]], axis=1)
            done |= nxt == vocab.eos_id
            if done.all():
                break

    hyps = []
    for row in ids:
        toks = []
        for i in row[1:]:
            if i in (vocab.eos_id, vocab.pad_id):
                break
            toks.append(vocab.tokens[i])
        hyps.append(toks)
    return hyps, int((~done).sum())


def greedy_decode(model, direction, src_tokens, max_len=64):
    """Argmax decoding of one sentence until the end token or max_len."""
    hyps, _ = decode_batch(model, direction, [list(src_tokens)], max_len=max_len)
    return hyps[0]


# ---------------------------------------------------------------------------
# BLEU


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses, references, max_n=4, smooth=0.1):
    """Corpus-level BLEU in [0, 100] against single references."""
    if len(hypotheses) != len(references):
        raise ValueError(
            f"hypothesis/reference count mismatch: {len(hypotheses)} vs {len(references)}")
    if not hypotheses:
        raise ValueError("empty hypothesis list")
    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    if hyp_len == 0:
        return 0.0
    log_precisions = []
    for n in range(1, max_n + 1):
        matches = 0
        denom = 0
        for hyp, ref in zip(hypotheses, references):
            counts = _ngrams(hyp, n)
            if not counts:
                continue
            ref_counts = _ngrams(ref, n)
            matches += sum(min(c, ref_counts[g]) for g, c in counts.items())
            denom += sum(counts.values())
        if matches > 0:
            p = matches / denom
        else:
            p = smooth / max(denom, 1)
        log_precisions.append(np.log(p))
    bp = 1.0 if hyp_len >= ref_len else np.exp(1.0 - ref_len / hyp_len)
    return float(100.0 * bp * np.exp(np.mean(log_precisions)))


# ---------------------------------------------------------------------------
# the evaluation grid


@dataclass(frozen=True)
class RunHandle:
    """One finished training run, ready for evaluation."""

    kind: str
    train_mode: str              # "all" | "pv<lang>"
    train_domain: str
    seed: int
    directions: object           # DirectionSet used in training
    model: object = None         # in-memory model, or
    checkpoint: str = None       # path to load lazily


def evaluate_run(run, splits_by_domain, eval_directions, max_len=64, limit=None):
    """Score one run on every translation direction of every test corpus."""
    model = run.model
    absent = False
    if model is None:
        try:
            model = checkpoint_load(run.checkpoint)
        except Exception:  # absent cells, grid continues
            absent = True
    cells = []
    for test_domain in sorted(splits_by_domain):
        for direction in sorted(eval_directions):
            src, tgt = direction
            base = EvalCell(
                kind=run.kind, train_mode=run.train_mode,
                train_domain=run.train_domain, test_domain=test_domain,
                src=src, tgt=tgt,
                seen=run.directions.is_seen(direction),
                ood=test_domain != run.train_domain,
                seed=run.seed, bleu=None)
            if absent:
                cells.append(base)
                continue
            pairs = splits_by_domain[test_domain].pairs_for("test", direction)
            if limit is not None:
                pairs = pairs[:limit]
            if not pairs:
                cells.append(base)
                continue
            hyps, _ = decode_batch(
                model, direction, [list(p.src_tokens) for p in pairs], max_len=max_len)
            refs = [list(p.tgt_tokens) for p in pairs]
            cells.append(replace(base, bleu=corpus_bleu(hyps, refs)))
    return cells


def evaluate_grid(runs, splits_by_domain, eval_directions, max_len=64, limit=None):
    """One EvalCell per run x direction x test corpus; absent runs stay absent."""
    cells = []
    for run in runs:
        cells.extend(evaluate_run(run, splits_by_domain, eval_directions,
                                  max_len=max_len, limit=limit))
    return cells


def seed_aggregate(values):
    """Mean and population standard deviation, as reported per 3-seed group."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


# ---------------------------------------------------------------------------
# TSV round trip (the stats module's input contract)


def write_cells_tsv(cells, path):
    rows = []
    for c in cells:
        rows.append((
            c.kind, c.train_mode, c.train_domain, c.test_domain, c.src, c.tgt,
            "1" if c.seen else "0", "1" if c.ood else "0", str(c.seed),
            "NA" if c.bleu is None else f"{c.bleu:.6f}",
        ))
    rows.sort()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(TSV_HEADER) + "\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")


def read_cells_tsv(path):
    cells = []
    with open(path, encoding="utf-8") as fh:
        header = tuple(fh.readline().rstrip("\n").split("\t"))
        if header != TSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for line in fh:
            kind, mode, trd, ted, src, tgt, seen, ood, seed, bleu = (
                line.rstrip("\n").split("\t"))
            cells.append(EvalCell(
                kind=kind, train_mode=mode, train_domain=trd, test_domain=ted,
                src=src, tgt=tgt, seen=seen == "1", ood=ood == "1",
                seed=int(seed), bleu=None if bleu == "NA" else float(bleu)))
    return cells


# ---------------------------------------------------------------------------
# Table-1-style summary


def format_summary(cells, kinds=("N", "F", "E", "D", "T", "L")):
    """Rows of mean +/- std BLEU by test corpus, training set, and seen/unseen."""
    groups = {}
    for c in cells:
        if c.bleu is None:
            continue
        for subset in ("all",) + (("seen",) if c.seen else ("unseen",)):
            key = (c.test_domain, c.train_domain, c.train_mode, subset, c.kind)
            groups.setdefault(key, {}).setdefault(c.seed, []).append(c.bleu)

    def cell_text(test_d, train_d, mode, subset, kind):
        per_seed = groups.get((test_d, train_d, mode, subset, kind))
        if not per_seed:
            return "--"
        means = [float(np.mean(v)) for _, v in sorted(per_seed.items())]
        m, s = seed_aggregate(means)
        return f"{m:.1f}({s:.1f})"

    combos = sorted({(c.test_domain, c.train_domain, c.train_mode) for c in cells})
    width = 12
    lines = []
    header = f"{'test/train/mode':<28}{'subset':<8}" + "".join(f"{k:>{width}}" for k in kinds)
    lines.append(header)
    lines.append("-" * len(header))
    for test_d, train_d, mode in combos:
        subsets = ["all", "seen", "unseen"] if mode != "all" else ["seen"]
        for subset in subsets:
            label = f"{test_d}/{train_d}/{mode}"
            lines.append(
                f"{label:<28}{subset:<8}"
                + "".join(f"{cell_text(test_d, train_d, mode, subset, k):>{width}}"
                          for k in kinds))
    return "\n".join(lines) + "\n"
