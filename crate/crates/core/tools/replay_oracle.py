#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
# Copyright 2026 Podseal Authors
"""Brute-force PCR-10 chain recomputation for an ascii measurement list.

Reads lines `<pcr> <template_hash> <template> <fields...>` from stdin (or a
file argument), rebuilds every template hash from the length-prefixed field
encoding with hashlib, and folds them into a SHA-256 PCR starting at zero.

Prints one line per input log separated by blank lines:
  ok <final_pcr_hex>
  bad <line_index>        (stored template hash does not match)
"""
import hashlib
import sys


def unescape(field):
    return field.replace("\\x20", " ").replace("\\x5c", "\\")


def encode(fields):
    out = b""
    for f in fields:
        raw = f.encode("utf-8")
        out += len(raw).to_bytes(4, "big") + raw
    return out


def chain(lines):
    pcr = bytes(32)
    for i, line in enumerate(lines):
        parts = line.split(" ")
        stored = bytes.fromhex(parts[1])
        fields = [parts[3]] + [unescape(p) for p in parts[4:]]
        th = hashlib.sha256(encode(fields)).digest()
        if th != stored:
            return "bad %d" % i
        pcr = hashlib.sha256(pcr + th).digest()
    return "ok " + pcr.hex()


def main():
    src = open(sys.argv[1]) if len(sys.argv) > 1 else sys.stdin
    block = []
    for raw in src.read().splitlines():
        if raw == "":
            print(chain(block))
            block = []
            continue
        block.append(raw)


if __name__ == "__main__":
    main()
