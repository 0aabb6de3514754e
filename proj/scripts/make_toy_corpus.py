#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Writes the small templated English corpus used by tests and examples."""
import argparse
import random

SUBJECTS = ["the cat", "a dog", "the old man", "my sister", "the teacher", "a small bird",
            "the farmer", "our neighbour", "the child", "a tired horse"]
VERBS = ["sees", "finds", "likes", "carries", "follows", "paints", "watches", "keeps"]
OBJECTS = ["the red ball", "a wooden box", "the green door", "an apple", "the river",
           "a long rope", "the blue lamp", "a warm coat", "the garden", "a letter"]
PLACES = ["near the house", "in the morning", "by the road", "after dinner", "at the market",
          "under the tree", "on monday", "in the rain"]


def sentence(rng):
    s = f"{rng.choice(SUBJECTS)} {rng.choice(VERBS)} {rng.choice(OBJECTS)}"
    if rng.random() < 0.6:
        s += " " + rng.choice(PLACES)
    return s[0].upper() + s[1:] + "."


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/toy_corpus.txt")
    ap.add_argument("--bytes", type=int, default=64000)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    parts, size = [], 0
    while size < args.bytes:
        para = " ".join(sentence(rng) for _ in range(rng.randint(3, 6))) + "\n"
        parts.append(para)
        size += len(para)
    with open(args.out, "w", encoding="ascii") as f:
        f.write("".join(parts)[: args.bytes])


if __name__ == "__main__":
    main()
