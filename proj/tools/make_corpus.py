#!/usr/bin/env python3
"""Assemble a public-domain text corpus from files already on the system.

Sources: the SQLite amalgamation headers (public domain) and docutils
modules whose header states they are placed in the public domain.
"""
import argparse
import glob
import os
import sys

SQLITE = ["/usr/include/sqlite3.h", "/usr/include/sqlite3ext.h"]
DOCUTILS_GLOBS = [
    "/usr/local/lib/python3*/dist-packages/docutils/**/*.py",
    "/usr/lib/python3/dist-packages/docutils/**/*.py",
]
MARKER = "placed in the public domain"


def sources():
    for path in SQLITE:
        if os.path.isfile(path):
            yield path
    seen = set()
    for pattern in DOCUTILS_GLOBS:
        for path in sorted(glob.glob(pattern, recursive=True)):
            if path in seen:
                continue
            seen.add(path)
            with open(path, encoding="utf-8", errors="replace") as f:
                head = f.read(2000)
            if MARKER in head:
                yield path


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("output")
    ap.add_argument("--min-bytes", type=int, default=200_000)
    args = ap.parse_args()
    parts = []
    for path in sources():
        with open(path, "rb") as f:
            data = f.read()
        parts.append(data.decode("utf-8", errors="replace").encode("ascii", errors="replace"))
    blob = b"\n".join(parts)
    if len(blob) < args.min_bytes:
        sys.exit(f"only {len(blob)} bytes of public-domain text found")
    with open(args.output, "wb") as f:
        f.write(blob)
    print(f"{args.output}: {len(blob)} bytes from {len(parts)} files")


if __name__ == "__main__":
    main()
