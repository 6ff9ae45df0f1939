import itertools
import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import all_segmentations, levenshtein, preferred_segmentation, segmentation_strings
from urltran.adversary import (
    ATTACKS,
    HomoglyphTable,
    WordDictionary,
    augmentation_plan,
    build_adversarial_dataset,
    can_split,
    compound_attack,
    compound_split,
    homoglyph_attack,
    load_dictionary,
    load_homoglyph_table,
    reorder_params,
)
from urltran.corpus import BENIGN, COMPOUND, HOMOGLYPH, ORIGINAL, PHISH, REORDER, Dataset, UrlRecord, parse_url
from urltran.errors import FormatError, InvalidArgument, NoHomoglyphAvailable, NothingToPermute, NotSplittable
from urltran.synthetic import make_corpus

SMALL_WORDS = [
    "a", "ab", "abc", "b", "ba", "bank", "of", "america", "cat", "dog",
    "cats", "catd", "ca", "og", "do", "ban", "kof", "ame", "rica", "go",
]


@pytest.fixture(scope="module")
def table():
    return load_homoglyph_table()


@pytest.fixture(scope="module")
def words():
    return load_dictionary()


# --------------------------------------------------------------------------
# tables


def test_bundled_table_is_latin_cyrillic(table):
    assert "a" in table and "7" not in table
    assert table.allows("a", "а")
    for src, dsts in table.mapping.items():
        assert src not in dsts


def test_table_rejects_bad_entries(tmp_path):
    with pytest.raises(FormatError):
        HomoglyphTable({"ab": ["x"]})
    with pytest.raises(FormatError):
        HomoglyphTable({"a": ["a"]})
    with pytest.raises(FormatError):
        HomoglyphTable({"a": ["α"]})  # Greek is out of scope
    path = tmp_path / "t.json"
    path.write_text("[1, 2]", "utf-8")
    with pytest.raises(FormatError):
        load_homoglyph_table(path)
    path.write_text(json.dumps({"o": ["о"]}), "utf-8")
    assert load_homoglyph_table(path).confusables("o") == ("о",)


def test_dictionary_rules(tmp_path):
    d = WordDictionary(["Bank", "of"])
    assert "BANK" in d and "bank" in d and "x" not in d
    assert d.max_len == 4
    with pytest.raises(FormatError):
        WordDictionary([])
    with pytest.raises(FormatError):
        WordDictionary(["ab1"])
    path = tmp_path / "w.txt"
    path.write_text("cat\n\ndog\n", "utf-8")
    assert len(load_dictionary(path)) == 2


# --------------------------------------------------------------------------
# homoglyph


def test_homoglyph_digits_only_host(table):
    with pytest.raises(NoHomoglyphAvailable):
        homoglyph_attack("http://777/x", table, seed=0)


def test_homoglyph_paypal(table):
    out = homoglyph_attack("https://paypal.com/login", table, seed=3)
    src = "https://paypal.com/login"
    diff = [i for i, (a, b) in enumerate(zip(src, out.url)) if a != b]
    assert len(out.url) == len(src) and len(diff) == 1
    i = diff[0]
    assert 8 <= i < 18
    assert table.allows(src[i], out.url[i])
    assert (out.label, out.origin) == (PHISH, HOMOGLYPH)


def test_homoglyph_only_touches_host(table):
    url = "http://user@abc.com/aaaa?a=a#a"
    for seed in range(50):
        out = homoglyph_attack(url, table, seed).url
        assert out[:12] == url[:12] and out[19:] == url[19:]


def test_homoglyph_deterministic(table):
    assert homoglyph_attack("paypal.com", table, 7) == homoglyph_attack("paypal.com", table, 7)


def test_homoglyph_corpus_edit_distance(table):
    for i, r in enumerate(make_corpus(300, seed=11)):
        try:
            out = homoglyph_attack(r.url, table, i)
        except NoHomoglyphAvailable:
            continue
        src_host, new_host = parse_url(r.url).host, parse_url(out.url).host
        assert levenshtein(src_host, new_host) == 1 and len(src_host) == len(new_host)


# --------------------------------------------------------------------------
# compound


def test_split_bankofamerica(words):
    assert compound_split("bankofamerica", words).parts == ("bank", "of", "america")


def test_split_no_coverage():
    d = WordDictionary(["bank", "of", "america"])
    assert compound_split("xq", d).splittable is False
    assert can_split("xq", d) is False


def test_split_catdog():
    d = WordDictionary(["cat", "dog", "cats", "catd"])
    assert compound_split("catdog", d) == compound_split("catdog", d)
    assert compound_split("catdog", d).parts == ("cat", "dog")


def test_split_empty():
    with pytest.raises(InvalidArgument):
        compound_split("", WordDictionary(["a"]))
    with pytest.raises(InvalidArgument):
        can_split("", WordDictionary(["a"]))


def test_compound_attack_example(words):
    out = compound_attack("https://bankofamerica.com/x", words)
    assert out.url == "https://bank-of-america.com/x"
    assert (out.label, out.origin) == (PHISH, COMPOUND)


def test_compound_attack_keeps_subdomain_and_tld(words):
    out = compound_attack("http://secure.bankofamerica.co.uk/a-b", words)
    assert out.url == "http://secure.bank-of-america.co.uk/a-b"


@pytest.mark.parametrize("url", ["https://bank.com/x", "http://10.0.0.1/x", "http://zzqx.com"])
def test_compound_attack_failures(words, url):
    with pytest.raises(NotSplittable):
        compound_attack(url, words)


def test_compound_inverse_on_corpus(words):
    hits = 0
    for r in make_corpus(400, seed=12):
        try:
            out = compound_attack(r.url, words)
        except NotSplittable:
            continue
        hits += 1
        src, new = parse_url(r.url).host, parse_url(out.url).host
        assert new.count("-") > src.count("-")
        # removing the inserted hyphens restores the source exactly
        ops = [i for i, ch in enumerate(new) if ch == "-"]
        for drop in itertools.combinations(ops, len(new) - len(src)):
            if "".join(ch for i, ch in enumerate(new) if i not in drop) == src:
                break
        else:
            pytest.fail(f"{new} does not reduce to {src}")
    assert hits > 20


def test_split_exhaustive_against_enumeration():
    d = WordDictionary(SMALL_WORDS)
    for s in segmentation_strings(SMALL_WORDS):
        segs = all_segmentations(s, SMALL_WORDS)
        res = compound_split(s, d)
        assert res.splittable == bool(segs) == can_split(s, d), s
        if segs:
            assert res.parts == preferred_segmentation(segs), s


@settings(max_examples=300, deadline=None)
@given(s=st.text(alphabet="abcdgikmnoftr", min_size=1, max_size=12))
def test_split_random_against_enumeration(s):
    d = WordDictionary(SMALL_WORDS)
    segs = all_segmentations(s, SMALL_WORDS)
    res = compound_split(s, d)
    assert res.splittable == bool(segs) == can_split(s, d)
    if segs:
        assert res.parts == preferred_segmentation(segs)
        assert "".join(res.parts) == s


# --------------------------------------------------------------------------
# reorder


def test_reorder_single_pair():
    with pytest.raises(NothingToPermute):
        reorder_params("a.com/p?x=1", seed=0)
    with pytest.raises(NothingToPermute):
        reorder_params("a.com/p", seed=0)
    with pytest.raises(NothingToPermute):
        reorder_params("a.com/p?x=1&x=1", seed=0)


def test_reorder_two_pairs():
    for seed in range(5):
        out = reorder_params("a.com/p?x=1&y=2", seed)
        assert out.url == "a.com/p?y=2&x=1"
        assert (out.label, out.origin) == (BENIGN, REORDER)


def test_reorder_keeps_label_and_fragment():
    out = reorder_params("https://a.com/p?x=1&y=2&z#top", seed=1, label=PHISH)
    assert out.label == PHISH and out.url.endswith("#top")


@settings(max_examples=200, deadline=None)
@given(
    pairs=st.lists(st.tuples(st.text("kxyz", min_size=1, max_size=3), st.text("0123", max_size=3)), min_size=2, max_size=7),
    seed=st.integers(0, 2**32),
)
def test_reorder_is_a_permutation(pairs, seed):
    url = "http://h.com/p?" + "&".join(f"{k}={v}" for k, v in pairs) + "#f"
    if len(set(pairs)) < 2:
        with pytest.raises(NothingToPermute):
            reorder_params(url, seed)
        return
    out = reorder_params(url, seed)
    a, b = parse_url(url), parse_url(out.url)
    assert Counter(a.query) == Counter(b.query) and a.query != b.query
    assert (a.scheme, a.host, a.path, a.fragment) == (b.scheme, b.host, b.path, b.fragment)


def test_reorder_uniform_over_non_identity():
    url = "a.com/?a=1&b=2&c=3"
    counts = Counter(reorder_params(url, s).url for s in range(3000))
    assert len(counts) == 5
    assert url not in counts
    for n in counts.values():
        assert abs(n / 3000 - 0.2) < 0.03


# --------------------------------------------------------------------------
# augmentation


def test_augment_universal_fallback(table, words):
    ds = Dataset([UrlRecord(f"http://{'.'.join(ip)}/?q={i}", i % 2) for i, ip in enumerate(itertools.product("0147", repeat=4))])
    assert build_adversarial_dataset(ds, table, words, seed=0).records == ds.records


def test_augment_empty(table, words):
    with pytest.raises(InvalidArgument):
        build_adversarial_dataset(Dataset([]), table, words, seed=0)


def test_plan_proportions():
    plan = augmentation_plan(10_000, seed=0)
    assert abs(plan.augment.mean() - 0.5) <= 0.02
    picked = plan.attack[plan.augment]
    for k in range(len(ATTACKS)):
        assert abs((picked == k).mean() - 1 / 3) <= 0.02
    assert (plan.attack[~plan.augment] == -1).all()


def test_plan_prefix_stable():
    a, b = augmentation_plan(100, 4), augmentation_plan(300, 4)
    np.testing.assert_array_equal(a.augment, b.augment[:100])
    np.testing.assert_array_equal(a.seeds, b.seeds[:100])


def test_augment_contract(table, words):
    ds = make_corpus(1000, seed=13)
    out = build_adversarial_dataset(ds, table, words, seed=2)
    assert len(ds) <= len(out) <= 2 * len(ds)
    assert out == build_adversarial_dataset(ds, table, words, seed=2)
    originals = iter(ds.records)
    prev = None
    for rec in out.records:
        if rec.origin == ORIGINAL:
            assert rec == next(originals)
        else:
            # every perturbed record directly follows its source
            assert prev is not None and prev.origin == ORIGINAL
            if rec.origin in (HOMOGLYPH, COMPOUND):
                assert rec.label == PHISH
            else:
                assert rec.label == prev.label
        prev = rec
    assert next(originals, None) is None
    kinds = Counter(r.origin for r in out if r.origin != ORIGINAL)
    assert set(kinds) == {HOMOGLYPH, COMPOUND, REORDER}
