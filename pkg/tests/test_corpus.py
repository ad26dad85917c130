import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modnmt.corpus import (
    CorpusSizes,
    LanguageSpec,
    SentencePair,
    build_direction_set,
    corpus_manifest,
    default_domains,
    default_language_specs,
    generate_corpus,
    ingest_aligned_text,
    load_corpus,
    save_corpus,
    specs_from_manifest,
    split_with_closure,
)

SPECS = default_language_specs(("la", "lb", "lc", "ld", "le", "lf"), alphabet=16, seed=3)
DOMAINS = default_domains()


def small_corpus(sizes=CorpusSizes(train=30, validation=5, test=5, autoencoding=6), seed=0):
    return generate_corpus(SPECS, DOMAINS, sizes, seed=seed)


class TestRendering:
    def test_identity_language_composed_permutation(self):
        spec_a, spec_f = SPECS[0], SPECS[5]  # both identity ordering
        latent = [3, 1, 4, 1, 5]
        ta = spec_a.render(latent)
        tf = spec_f.render(latent)
        # strip lf's affixes; remaining tokens map 1:1 under composed permutation
        body = tf[len(spec_f.prefix): len(tf) - len(spec_f.suffix)]
        mapping = {}
        for x, y in zip(ta, body):
            assert mapping.setdefault(x, y) == y

    def test_reversal_language_against_independent_renderer(self):
        spec = SPECS[1]
        assert spec.ordering == "reversal"
        latent = [0, 3, 7, 2]
        by_hand = [spec.vocabulary[spec.substitution[s]] for s in latent[::-1]]
        assert spec.render(latent) == by_hand

    def test_rotation_and_swap_invertible(self):
        for spec in SPECS:
            for n in range(1, 9):
                latent = list(np.random.default_rng(n).integers(0, 16, size=n))
                assert spec.invert(spec.render(latent)) == latent

    def test_round_trip_thousand_random_sentences(self):
        rng = np.random.default_rng(9)
        for _ in range(1000 // len(SPECS)):
            n = int(rng.integers(1, 25))
            latent = list(rng.integers(0, 16, size=n))
            for spec in SPECS:
                assert spec.invert(spec.render(latent)) == latent

    def test_specs_differ_in_substitution(self):
        subs = {tuple(s.substitution) for s in SPECS}
        assert len(subs) == len(SPECS)

    def test_non_permutation_rejected(self):
        with pytest.raises(ValueError, match="permutation"):
            LanguageSpec("xx", ("a", "b"), (0, 0), "identity")


class TestGenerateCorpus:
    def test_same_seed_identical(self):
        assert small_corpus(seed=4) == small_corpus(seed=4)

    def test_different_seed_differs(self):
        assert small_corpus(seed=4) != small_corpus(seed=5)

    def test_pairs_render_same_latent(self):
        by_lang = {s.lang: s for s in SPECS}
        for p in small_corpus()[:500]:
            src_latent = by_lang[p.src_lang].invert(list(p.src_tokens))
            tgt_latent = by_lang[p.tgt_lang].invert(list(p.tgt_tokens))
            assert src_latent == tgt_latent

    def test_autoencoding_pool_disjoint_and_same_sided(self):
        pairs = small_corpus()
        auto = [p for p in pairs if p.src_lang == p.tgt_lang]
        trans = [p for p in pairs if p.src_lang != p.tgt_lang]
        assert auto and trans
        assert {p.latent_id for p in auto}.isdisjoint({p.latent_id for p in trans})
        assert all(p.src_tokens == p.tgt_tokens for p in auto)

    def test_needs_two_languages(self):
        with pytest.raises(ValueError, match="two language"):
            generate_corpus(SPECS[:1], DOMAINS, CorpusSizes(2, 1, 1, 1), seed=0)

    def test_domain_length_profiles_differ(self):
        pairs = small_corpus(CorpusSizes(train=200, validation=10, test=10, autoencoding=10))
        mean_len = {}
        for domain in ("alpha", "beta"):
            lens = [len(p.src_tokens) for p in pairs
                    if p.domain == domain and p.src_lang == "la"]
            mean_len[domain] = np.mean(lens)
        assert abs(mean_len["beta"] - mean_len["alpha"]) >= 5.0


def chain_pairs(n):
    """s0-s1, s1-s2, ... : every pair shares a sentence with the next."""
    toks = [(f"w{i}",) for i in range(n + 1)]
    return [
        SentencePair("x", "y", toks[i], toks[i + 1], f"lat{i}", "d")
        for i in range(n)
    ]


class TestSplitClosure:
    def test_paper_chain_case(self):
        # (s1,s2) and (s2,s3) share s2: wherever one goes, the other follows
        pairs = [
            SentencePair("x", "y", ("s1",), ("s2",), "p1", "d"),
            SentencePair("x", "y", ("s2",), ("s3",), "p2", "d"),
        ]
        for seed in range(20):
            splits = split_with_closure(pairs, fractions=(0.4, 0.3, 0.3), seed=seed)
            homes = {name for name in ("train", "validation", "test")
                     if splits.pairs_for(name)}
            assert len(homes) == 1

    def test_disjoint_pairs_hit_fractions_within_one(self):
        pairs = [
            SentencePair("x", "y", (f"a{i}",), (f"b{i}",), f"l{i}", "d")
            for i in range(200)
        ]
        splits = split_with_closure(pairs, fractions=(0.8, 0.1, 0.1), seed=0)
        assert abs(len(splits.test) - 20) <= 1
        assert abs(len(splits.validation) - 20) <= 1

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            split_with_closure(chain_pairs(3), fractions=(0.5, 0.2, 0.2))

    def test_oversized_component_reported_and_kept_in_train(self):
        pairs = chain_pairs(50)  # one giant component
        with pytest.warns(UserWarning, match="exceeded"):
            splits = split_with_closure(pairs, fractions=(0.8, 0.1, 0.1), seed=1)
        assert len(splits.train) == 50
        assert splits.oversized

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_partition_property_random_graphs(self, data):
        rng_seed = data.draw(st.integers(0, 10_000))
        rng = np.random.default_rng(rng_seed)
        pairs = []
        # random mix of chains, stars and isolated pairs over a small universe
        n_sent = data.draw(st.integers(4, 40))
        n_pairs = data.draw(st.integers(3, 80))
        for i in range(n_pairs):
            a, b = rng.integers(0, n_sent, size=2)
            pairs.append(SentencePair(
                "x", "y", (f"s{a}",), (f"s{b}",), f"lat{min(a, b)}", "d"))
        splits = split_with_closure(pairs, fractions=(0.6, 0.2, 0.2), seed=rng_seed)
        seen = {}
        for name in ("train", "validation", "test"):
            for p in splits.pairs_for(name):
                for sent in (p.src_tokens, p.tgt_tokens):
                    assert seen.setdefault(sent, name) == name
                assert splits.component_map[p.latent_id] == name


class TestDirectionSets:
    def test_all_mode_counts(self):
        ds = build_direction_set(["la", "lb", "lc", "ld", "le", "lf"])
        assert len(ds.translation) == 30
        assert len(ds.autoencoding) == 6

    def test_pivot_counts_and_membership(self):
        ds = build_direction_set(["la", "lb", "lc", "ld", "le", "lf"], pivot="lb")
        assert len(ds.translation) == 10
        assert all("lb" in d for d in ds.translation)
        assert len(ds.autoencoding) == 6

    def test_pivot_complement(self):
        langs = ["la", "lb", "lc", "ld", "le", "lf"]
        every = set(build_direction_set(langs).translation)
        pivot = set(build_direction_set(langs, pivot="la").translation)
        unseen = every - pivot
        assert len(unseen) == 20
        assert all("la" not in d for d in unseen)

    def test_unknown_pivot(self):
        with pytest.raises(ValueError, match="pivot"):
            build_direction_set(["la", "lb"], pivot="zz")


class TestIngestion:
    def test_three_line_files(self, tmp_path):
        src = tmp_path / "src.txt"
        tgt = tmp_path / "tgt.txt"
        src.write_text("a b\nc d\ne\n", encoding="utf-8")
        tgt.write_text("x\ny z\nw\n", encoding="utf-8")
        pairs = ingest_aligned_text(src, tgt, "en", "fr")
        assert len(pairs) == 3
        assert pairs[0].src_tokens == ("a", "b")
        assert pairs[0].tgt_tokens == ("x",)

    def test_duplicate_source_shares_latent_id(self, tmp_path):
        src = tmp_path / "src.txt"
        tgt = tmp_path / "tgt.txt"
        src.write_text("same line\nsame line\nother\n", encoding="utf-8")
        tgt.write_text("t1\nt2\nt3\n", encoding="utf-8")
        pairs = ingest_aligned_text(src, tgt, "en", "fr")
        assert pairs[0].latent_id == pairs[1].latent_id != pairs[2].latent_id
        splits = split_with_closure(pairs, fractions=(0.5, 0.25, 0.25), seed=0)
        first_home = splits.component_map[pairs[0].latent_id]
        assert splits.component_map[pairs[1].latent_id] == first_home

    def test_count_mismatch_reports_both(self, tmp_path):
        src = tmp_path / "src.txt"
        tgt = tmp_path / "tgt.txt"
        src.write_text("\n".join(f"s{i}" for i in range(100)) + "\n", encoding="utf-8")
        tgt.write_text("\n".join(f"t{i}" for i in range(99)) + "\n", encoding="utf-8")
        with pytest.raises(ValueError, match="100.*99"):
            ingest_aligned_text(src, tgt, "en", "fr")

    def test_empty_lines_skipped_with_warning(self, tmp_path):
        src = tmp_path / "src.txt"
        tgt = tmp_path / "tgt.txt"
        src.write_text("a\n\nb\n", encoding="utf-8")
        tgt.write_text("x\ny\nz\n", encoding="utf-8")
        with pytest.warns(UserWarning, match="skipped 1"):
            pairs = ingest_aligned_text(src, tgt, "en", "fr")
        assert len(pairs) == 2


class TestPersistence:
    def test_manifest_regenerates_identical_corpus(self, tmp_path):
        sizes = CorpusSizes(train=20, validation=4, test=4, autoencoding=4)
        manifest = corpus_manifest(SPECS, DOMAINS, sizes, seed=12)
        specs2, domains2, sizes2 = specs_from_manifest(manifest)
        assert generate_corpus(SPECS, DOMAINS, sizes, seed=12) == \
            generate_corpus(specs2, domains2, sizes2, seed=12)

    def test_save_load_round_trip(self, tmp_path):
        sizes = CorpusSizes(train=20, validation=4, test=4, autoencoding=4)
        pairs = generate_corpus(SPECS, DOMAINS, sizes, seed=12)
        by_domain = {}
        for domain in ("alpha", "beta"):
            dom = [p for p in pairs if p.domain == domain]
            by_domain[domain] = split_with_closure(dom, sizes.fractions, seed=1)
        manifest = corpus_manifest(SPECS, DOMAINS, sizes, seed=12)
        prefix = str(tmp_path / "corpus")
        save_corpus(prefix, by_domain, manifest)
        manifest2, loaded = load_corpus(prefix)
        assert manifest2 == manifest
        for domain in by_domain:
            for split in ("train", "validation", "test"):
                assert sorted(map(str, loaded[domain].pairs_for(split))) == \
                    sorted(map(str, by_domain[domain].pairs_for(split)))
