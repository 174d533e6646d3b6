"""Shared fixtures-by-code for the test suite."""

import os
import random

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
CORPUS_DIR = os.path.join(FIXTURES, "corpus")
INSTRUCT_DIR = os.path.join(FIXTURES, "instruct")

# Yoruba / isiZulu / Swahili / Hausa material plus plain ASCII and French,
# mixing composed and decomposed diacritics on purpose.
MULTILINGUAL_SAMPLES = [
    "Mo fẹ́ràn oúnjẹ Yorùbá gan-an ni",
    "ọmọdé kékeré ń ka ìwé ní ilé-ẹ̀kọ́",
    "abantwana bafunda isiZulu esikoleni",
    "watoto wanasoma vitabu shuleni leo",
    "yara suna karatu a makaranta yau",
    "les enfants lisent à l'école aujourd'hui",
    "the quick brown fox jumps over the lazy dog",
    "école déjà vu",  # decomposed accents
    "ạ́kọ́wé",  # dot-below + acute stacking
]


def fuzz_strings(n, seed=0):
    rng = random.Random(seed)
    pool = []
    for s in MULTILINGUAL_SAMPLES:
        pool.extend(s.split(" "))
    out = []
    for _ in range(n):
        k = rng.randint(0, 8)
        words = [rng.choice(pool) for _ in range(k)]
        sep = rng.choice([" ", "  ", "\n", "\t", " \n "])
        out.append(sep.join(words) + rng.choice(["", " ", "\n"]))
    return out
