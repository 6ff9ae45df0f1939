"""Synthetic URL corpus for the end-to-end desk run.

Phish URLs carry one of two planted host patterns: a brand name with one
letter swapped for a Cyrillic look-alike, or a brand split into
hyphenated words.  Benign hosts are plain ASCII concatenations with no
hyphens.  Paths and queries are drawn from one shared pool for both
classes so the host is where the signal lives.

Only five Cyrillic look-alikes are planted; the full homoglyph table used
by the attack module is much larger, which leaves room for adversarial
training to help.
"""

from __future__ import annotations

import numpy as np

from .corpus import BENIGN, PHISH, Dataset, UrlRecord

# brand -> its dictionary-word split
BRANDS = {
    "paypal": ("pay", "pal"),
    "bankofamerica": ("bank", "of", "america"),
    "wellsfargo": ("wells", "fargo"),
    "facebook": ("face", "book"),
    "mailbox": ("mail", "box"),
    "dropbox": ("drop", "box"),
    "netflix": ("net", "flix"),
    "homedepot": ("home", "depot"),
    "bestbuy": ("best", "buy"),
    "firstbank": ("first", "bank"),
    "cloudstore": ("cloud", "store"),
    "citizensbank": ("citizens", "bank"),
    "truecredit": ("true", "credit"),
    "fastmail": ("fast", "mail"),
    "rockstargames": ("rockstar", "games"),
    "silverline": ("silver", "line"),
}

WORDS = (
    "apple", "garden", "river", "stone", "green", "blue", "market", "light",
    "north", "south", "table", "paper", "music", "house", "travel", "coffee",
    "forest", "ocean", "city", "sun", "star", "book", "cook", "bike",
    "photo", "craft", "wild", "maple", "cedar", "pine", "golden", "silver",
    "happy", "kitchen", "daily", "news", "sport", "planet", "health", "school",
    "family", "lake", "water", "winter", "summer", "harbor", "valley", "field",
)

TLDS = ("com", "com", "com", "org", "net", "co.uk", "io")
SUBDOMAINS = ("www", "www", "m", "secure", "login", "account", "app", "mail")
PATH_WORDS = (
    "index", "home", "login", "signin", "account", "verify", "update", "profile",
    "news", "blog", "shop", "cart", "item", "help", "support", "search",
    "docs", "about", "contact", "images", "static", "page", "post", "user",
)
QUERY_KEYS = ("id", "ref", "q", "page", "lang", "session", "token", "utm", "sort", "next")
EXTENSIONS = ("", "", "", ".html", ".php", ".aspx")

# Latin letter -> Cyrillic look-alike, the only substitutions planted
PLANTED_HOMOGLYPHS = {"a": "а", "e": "е", "o": "о", "p": "р", "c": "с"}


def _choice(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


def _path_and_query(rng: np.random.Generator) -> str:
    depth = int(rng.integers(0, 4))
    path = "".join("/" + _choice(rng, PATH_WORDS) for _ in range(depth))
    if depth:
        path += _choice(rng, EXTENSIONS)
    else:
        path = "/" if rng.random() < 0.5 else ""
    if rng.random() < 0.5:
        npairs = int(rng.integers(1, 4))
        keys = rng.choice(len(QUERY_KEYS), size=npairs, replace=False)
        query = "&".join(f"{QUERY_KEYS[k]}={int(rng.integers(1000))}" for k in keys)
        path = (path or "/") + "?" + query
    return path


def _prefix(rng: np.random.Generator) -> str:
    scheme = "https://" if rng.random() < 0.7 else "http://"
    sub = _choice(rng, SUBDOMAINS) + "." if rng.random() < 0.5 else ""
    return scheme + sub


def benign_url(rng: np.random.Generator) -> str:
    if rng.random() < 0.3:
        label = _choice(rng, list(BRANDS))
    else:
        label = _choice(rng, WORDS) + _choice(rng, WORDS)
    return _prefix(rng) + label + "." + _choice(rng, TLDS) + _path_and_query(rng)


def phish_url(rng: np.random.Generator) -> str:
    brand = _choice(rng, list(BRANDS))
    if rng.random() < 0.5:
        spots = [i for i, ch in enumerate(brand) if ch in PLANTED_HOMOGLYPHS]
        i = _choice(rng, spots)
        label = brand[:i] + PLANTED_HOMOGLYPHS[brand[i]] + brand[i + 1 :]
    else:
        label = "-".join(BRANDS[brand])
        if rng.random() < 0.3:
            label += "-" + _choice(rng, ("secure", "login", "verify", "online"))
    return _prefix(rng) + label + "." + _choice(rng, TLDS) + _path_and_query(rng)


def make_corpus(n: int, seed: int, phish_fraction: float = 0.5) -> Dataset:
    """``n`` labelled URLs in random class order."""
    rng = np.random.default_rng(seed)
    n_phish = int(round(n * phish_fraction))
    labels = np.array([PHISH] * n_phish + [BENIGN] * (n - n_phish))
    rng.shuffle(labels)
    records = [UrlRecord(phish_url(rng) if y == PHISH else benign_url(rng), int(y)) for y in labels]
    return Dataset(records)
