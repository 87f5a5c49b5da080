import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sltkit.corpus import load_corpus, load_manifest
from sltkit.errors import ConfigError, UnknownGesture, UnknownWord
from sltkit.synth import (
    Benchmark, BenchmarkSpec, LanguageSpec, ToyLanguage, ToyLexicon, gen_benchmark, gen_video, load_benchmark,
    partial_derangement, render_sentence, toy_mt,
)

SMALL = dict(n_train=6, n_dev=2, n_test=2, n_tune=2, mt_count=20)


def test_render_noiseless_single_gesture():
    lex = ToyLexicon.generate(4, 10, 0.0, seed=1)
    s = render_sentence([3], lex, np.random.default_rng(0))
    assert len(s) == 10 and s.fps == 10.0
    env = np.sin(np.pi * np.arange(10) / 10)
    np.testing.assert_allclose(s.frames, env[:, None] * lex.basis[3][None], atol=1e-6)


def test_render_empty_and_unknown():
    lex = ToyLexicon.generate(4, 10, 0.0)
    assert len(render_sentence([], lex, np.random.default_rng(0))) == 0
    with pytest.raises(UnknownGesture):
        render_sentence([4], lex, np.random.default_rng(0))


def test_rendered_gestures_point_at_their_basis():
    lex = ToyLexicon.generate(16, 10, 0.02, seed=3)
    s = render_sentence([2, 9], lex, np.random.default_rng(0))
    for part, own, other in ((s.frames[:10], 2, 9), (s.frames[10:], 9, 2)):
        v = part.sum(0) / np.linalg.norm(part.sum(0))
        assert v @ lex.basis[own] > v @ lex.basis[other]


def test_noiseless_rendering_is_injective():
    lex = ToyLexicon.generate(5, 4, 0.0, seed=2)
    rng = np.random.default_rng(0)
    seqs = [(), (0,), (1,), (0, 1), (1, 0), (0, 0), (4, 2, 3)]
    streams = [render_sentence(list(s), lex, rng).frames.tobytes() for s in seqs]
    assert len(set(streams)) == len(seqs)


def test_gen_video_timing_and_order():
    lex = ToyLexicon.generate(8, 10, 0.0)
    fwd = ToyLanguage.build("en0", "w", 8)
    rev = ToyLanguage.build("xb", "v", 8, order="reversed")
    v = gen_video("v", "sgn", [[1, 2, 3], [4, 5, 6]], lex, [fwd, rev], np.random.default_rng(0))
    assert v.duration_s == 6.0
    en = v.captions_for("en0")
    assert [(c.start_s, c.end_s, c.text) for c in en] == [(0, 3, "w1 w2 w3"), (3, 6, "w4 w5 w6")]
    assert [c.text for c in v.captions_for("xb")] == ["v3 v2 v1", "v6 v5 v4"]


def test_toy_mt_examples():
    a = ToyLanguage.build("a", "w", 4)
    b = ToyLanguage.build("b", "v", 4, order="reversed")
    assert toy_mt("w1 w2", a, b) == "v2 v1"
    assert toy_mt("w1 w2", a, a) == "w1 w2"
    with pytest.raises(UnknownWord):
        toy_mt("w9", a, b)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 7), max_size=6), st.permutations(range(8)), st.sampled_from(["identity", "reversed"]))
def test_toy_mt_bijective(gestures, perm, order):
    a = ToyLanguage.build("a", "w", 8)
    b = ToyLanguage.build("b", "v", 8, order=order, perm=perm)
    s = a.render(gestures)
    assert toy_mt(toy_mt(s, a, b), b, a) == s


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 40), st.floats(0.0, 1.0), st.integers(0, 1000))
def test_partial_derangement_moves_exactly_the_subset(g, frac, seed):
    perm = partial_derangement(g, frac, np.random.default_rng(seed))
    assert sorted(perm) == list(range(g))
    k = int(round(frac * g))
    assert int((perm != np.arange(g)).sum()) == (k if k >= 2 else 0)


def test_language_spec_validation():
    with pytest.raises(ConfigError):
        LanguageSpec("x", "x", permute_fraction=1.5)
    with pytest.raises(ConfigError):
        Benchmark.from_spec(BenchmarkSpec(seen_langs=["xa"]))
    with pytest.raises(ConfigError):
        Benchmark.from_spec(BenchmarkSpec(augment_langs=["zz"]))


def test_benchmark_bookkeeping(tmp_path):
    spec = BenchmarkSpec(**SMALL)
    m = gen_benchmark(spec, tmp_path)
    assert {s: len(m.split(s)) for s in ("train", "dev", "test", "tune")} == {"train": 6, "dev": 2, "test": 2, "tune": 2}
    assert all(sh.count == 20 for sh in m.mt_shards)
    corpus = load_corpus(tmp_path)
    for v in corpus.split("train"):
        assert not v.captions_for("xa", augmented=False)
        assert v.captions_for("xa", augmented=True)
        assert v.captions_for("xb", augmented=False) and v.captions_for("xb", augmented=True)
        assert not v.captions_for("en0", augmented=True)
    assert all(v.captions_for("xa", augmented=False) for v in corpus.split("test"))
    assert load_benchmark(tmp_path).spec == spec


def test_augmented_train_captions_are_oracle_translations(tmp_path):
    gen_benchmark(BenchmarkSpec(**SMALL), tmp_path)
    oracle = load_benchmark(tmp_path).oracle()
    for v in load_corpus(tmp_path, ["train"]).split("train"):
        en = {(c.start_s, c.end_s): c.text for c in v.captions_for("en0")}
        for c in v.captions_for("xa", augmented=True):
            assert c.text == oracle(en[(c.start_s, c.end_s)], "en0", "xa")


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_regeneration_is_byte_identical(tmp_path):
    gen_benchmark(BenchmarkSpec(**SMALL), tmp_path / "a")
    gen_benchmark(BenchmarkSpec(**SMALL), tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    gen_benchmark(BenchmarkSpec(**{**SMALL, "seed": 1}), tmp_path / "c")
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")
    assert load_manifest(tmp_path / "a" / "manifest.json").videos


def test_two_sign_languages_get_distinct_lexicons(tmp_path):
    spec = BenchmarkSpec(**{**SMALL, "sign_langs": ["sgn", "sgn2"]})
    m = gen_benchmark(spec, tmp_path)
    assert m.language_durations("train").keys() == {"sgn", "sgn2"}
    lex = load_benchmark(tmp_path).lexicons
    assert not np.allclose(lex["sgn"].basis, lex["sgn2"].basis)
