"""Experiment plans: the architecture x training-set x seed grid and its jobs.

The full paper-shaped grid is 6 kinds x (all + two pivots on the first domain
+ first pivot on the second domain) x 3 seeds = 72 runs. Each job is
independent, deterministic under its derived seed, and writes only inside its
own run directory, so jobs parallelize freely.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

from . import corpus as corpus_mod
from .corpus import (
    CorpusSizes,
    DomainProfile,
    build_direction_set,
    default_language_specs,
    generate_corpus,
    split_with_closure,
)
from .evaluation import RunHandle, evaluate_run
from .model import ModelDims, build_model, checkpoint_save, write_model_card
from .trainer import AdamConfig, SamplingPolicy, TrainBudget, train

DEFAULT_CONFIG = {
    "seed": 1234,
    "languages": list(corpus_mod.DEFAULT_LANGUAGES),
    "alphabet": 32,
    "domains": [
        {"name": "alpha", "min_len": 5, "max_len": 12, "zipf_a": 1.1, "shift": 0},
        {"name": "beta", "min_len": 10, "max_len": 24, "zipf_a": 1.1, "shift": 16},
    ],
    "sizes": {"train": 2000, "validation": 100, "test": 60, "autoencoding": 400},
    "dims": {"d": 64, "d_ff": 256, "heads": 4, "enc_layers": 2, "dec_layers": 2,
             "k": 50, "d_a": None},
    "budget": {"total": 40000, "batch_size": 25, "accumulation": 8,
               "autoencoding_weight": 1.0},
    "optimizer": {"beta1": 0.9, "beta2": 0.98, "eps": 1e-9, "lr_scale": 2.0,
                  "warmup": 400, "clip_norm": 1.0},
    "grid": {"kinds": ["F", "N", "E", "D", "T", "L"],
             "seeds": [0, 1, 2],
             "pivots": ["lb", "la"],
             "include_all_mode": True,
             "second_domain_pivot": True},
    "eval": {"max_len": 40, "limit": None},
}


class ConfigError(ValueError):
    pass


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        user = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: parse error at line {e.lineno}, column {e.colno}: {e.msg}")
    return merge_config(user, source=path)


def merge_config(user, source="<config>"):
    """Overlay a user dict on the defaults, rejecting unknown keys."""
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    for key, value in user.items():
        if key not in cfg:
            raise ConfigError(f"{source}: unknown config key {key!r}")
        if isinstance(cfg[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{source}: {key!r} must be an object")
            for sub, sval in value.items():
                if sub not in cfg[key]:
                    raise ConfigError(f"{source}: unknown config key {key}.{sub}")
                cfg[key][sub] = sval
        else:
            cfg[key] = value
    return cfg


def config_pieces(cfg):
    """Config dict -> (specs, domains, sizes, dims, budget, adam)."""
    specs = default_language_specs(
        languages=tuple(cfg["languages"]), alphabet=cfg["alphabet"], seed=cfg["seed"])
    domains = tuple(DomainProfile(**d) for d in cfg["domains"])
    sizes = CorpusSizes(**cfg["sizes"])
    dims = ModelDims(**cfg["dims"])
    b = cfg["budget"]
    budget = TrainBudget(
        total=b["total"], batch_size=b["batch_size"], accumulation=b["accumulation"],
        policy=SamplingPolicy(autoencoding_weight=b["autoencoding_weight"]))
    adam = AdamConfig(**cfg["optimizer"])
    return specs, domains, sizes, dims, budget, adam


@dataclass(frozen=True)
class Job:
    kind: str
    mode: str          # "all" or "pv<lang>"
    pivot: str | None
    train_domain: str
    seed: int

    @property
    def name(self):
        return f"{self.kind}-{self.mode}-{self.train_domain}-s{self.seed}"


def expand_plan(cfg):
    """Deterministic job list for the grid; 72 jobs under the defaults."""
    grid = cfg["grid"]
    domains = [d["name"] for d in cfg["domains"]]
    modes = []
    if grid["include_all_mode"]:
        modes.append(("all", None, domains[0]))
    for pivot in grid["pivots"]:
        modes.append((f"pv{pivot}", pivot, domains[0]))
    if grid["second_domain_pivot"] and len(domains) > 1 and grid["pivots"]:
        pivot = grid["pivots"][0]
        modes.append((f"pv{pivot}", pivot, domains[1]))
    return [
        Job(kind=kind, mode=mode, pivot=pivot, train_domain=domain, seed=seed)
        for kind in grid["kinds"]
        for (mode, pivot, domain) in modes
        for seed in grid["seeds"]
    ]


def derive_seed(base, *parts):
    """Stable 63-bit seed from the plan seed and any string parts."""
    digest = hashlib.sha256(":".join([str(base), *parts]).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# ---------------------------------------------------------------------------
# pipeline stages


def corpus_prefix(out_root):
    return os.path.join(out_root, "corpus")


def run_dir(out_root, job):
    return os.path.join(out_root, "runs", job.name)


def generate_and_save_corpus(cfg, out_root):
    """gen-corpus stage: pairs + per-domain closure splits + manifest."""
    specs, domains, sizes, _, _, _ = config_pieces(cfg)
    pairs = generate_corpus(specs, domains, sizes, seed=derive_seed(cfg["seed"], "corpus"))
    splits_by_domain = {}
    for domain in domains:
        dom_pairs = [p for p in pairs if p.domain == domain.name]
        splits_by_domain[domain.name] = split_with_closure(
            dom_pairs, fractions=sizes.fractions,
            seed=derive_seed(cfg["seed"], "split", domain.name))
    manifest = corpus_mod.corpus_manifest(specs, domains, sizes, cfg["seed"])
    os.makedirs(out_root, exist_ok=True)
    corpus_mod.save_corpus(corpus_prefix(out_root), splits_by_domain, manifest)
    return splits_by_domain


def load_saved_corpus(out_root):
    prefix = corpus_prefix(out_root)
    if not os.path.exists(f"{prefix}.manifest.json"):
        raise FileNotFoundError(
            f"no corpus under {out_root}; run the gen-corpus command first")
    return corpus_mod.load_corpus(prefix)


def vocabs_from_manifest(manifest):
    return {s["lang"]: (s["vocabulary"] + s["prefix"] + s["suffix"])
            for s in manifest["languages"]}


def run_job(cfg, job, out_root):
    """Train one grid job; everything it writes stays inside its run directory."""
    manifest, splits_by_domain = load_saved_corpus(out_root)
    _, _, _, dims, budget, adam = config_pieces(cfg)
    vocabs = vocabs_from_manifest(manifest)
    directions = build_direction_set(sorted(vocabs), pivot=job.pivot)
    model = build_model(
        job.kind, vocabs, dims=dims,
        seed=derive_seed(cfg["seed"], "init", job.name, str(job.seed)))
    d = run_dir(out_root, job)
    os.makedirs(d, exist_ok=True)
    with open(os.path.join(d, "config.json"), "w", encoding="utf-8") as fh:
        json.dump({"config": cfg, "job": job.__dict__}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    try:
        train(
            model, splits_by_domain[job.train_domain], directions, budget,
            seed=derive_seed(cfg["seed"], "train", job.name, str(job.seed)),
            adam=adam, log_path=os.path.join(d, "train_log.jsonl"))
        checkpoint_save(model, os.path.join(d, "checkpoint.bin"),
                        budget_consumed=budget.total)
        write_model_card(model, os.path.join(d, "model_card.txt"),
                         budget_consumed=budget.total)
        status = "ok"
    except Exception as e:
        status = f"failed: {type(e).__name__}: {e}"
    with open(os.path.join(d, "status.txt"), "w", encoding="utf-8") as fh:
        fh.write(status + "\n")
    if status != "ok":
        raise RuntimeError(f"{job.name}: {status}")
    return job.name


def evaluate_job(cfg, job, out_root):
    """Evaluate one run on the test splits of every domain; returns cells."""
    manifest, splits_by_domain = load_saved_corpus(out_root)
    languages = sorted(s["lang"] for s in manifest["languages"])
    directions = build_direction_set(languages, pivot=job.pivot)
    eval_directions = build_direction_set(languages).translation
    handle = RunHandle(
        kind=job.kind, train_mode=job.mode, train_domain=job.train_domain,
        seed=job.seed, directions=directions,
        checkpoint=os.path.join(run_dir(out_root, job), "checkpoint.bin"))
    return evaluate_run(
        handle, splits_by_domain, eval_directions,
        max_len=cfg["eval"]["max_len"], limit=cfg["eval"]["limit"])
