#!/usr/bin/env python3
"""Recomputes knowledge-base summary statistics straight from a JSON-lines file.

Usage: dataset_stats.py KB.jsonl  -> prints one JSON object.

Token rule: every CJK character is one token; every maximal run of other
word characters is one token; whitespace and punctuation count for nothing.
"""

import json
import sys
from decimal import ROUND_HALF_UP, Decimal

CJK_RANGES = [
    (0x4E00, 0x9FFF), (0x3400, 0x4DBF), (0x20000, 0x2EBEF),
    (0xF900, 0xFAFF), (0x3040, 0x30FF), (0xAC00, 0xD7AF),
]
NON_WORD_RANGES = [
    (0x2000, 0x206F), (0x3000, 0x303F), (0xFE30, 0xFE4F), (0xFF00, 0xFF0F),
    (0xFF1A, 0xFF20), (0xFF3B, 0xFF40), (0xFF5B, 0xFF65), (0x00A1, 0x00BF),
]


def in_ranges(cp, ranges):
    return any(lo <= cp <= hi for lo, hi in ranges)


def is_word(ch):
    cp = ord(ch)
    if cp < 0x80:
        return ch.isascii() and (ch.isalnum() or ch == "_")
    if cp in (0x00A0, 0xFEFF, 0xFFFD):
        return False
    return not in_ranges(cp, NON_WORD_RANGES)


def tokens(text):
    count = 0
    prev_word = False
    for ch in text:
        if in_ranges(ord(ch), CJK_RANGES):
            count += 1
            prev_word = False
        elif is_word(ch):
            if not prev_word:
                count += 1
            prev_word = True
        else:
            prev_word = False
    return count


def has_code(answer):
    lines = [l.rstrip("\r") for l in answer.split("\n")]
    opened = False
    for line in lines:
        s = line.strip()
        if not opened:
            if s.startswith("```"):
                opened = True
        elif len(s) >= 3 and set(s) == {"`"}:
            return True
    return False


def avg(values):
    d = Decimal(sum(values)) / Decimal(len(values))
    return float(d.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def main(path):
    entries = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                entries.append(json.loads(line))
    q = [tokens(e["question"]) for e in entries]
    a = [tokens(e["answer"]) for e in entries]
    print(json.dumps({
        "n_entries": len(entries),
        "question_len_max": max(q),
        "question_len_min": min(q),
        "question_len_avg": avg(q),
        "answer_tokens_max": max(a),
        "answer_tokens_min": min(a),
        "answer_tokens_avg": avg(a),
        "n_with_code": sum(1 for e in entries if has_code(e["answer"])),
    }, sort_keys=True))


if __name__ == "__main__":
    main(sys.argv[1])
