#!/usr/bin/env python3
"""Retrieval entrypoint.

Reads one JSON request {"question": "..."} on stdin and writes one JSON
response {"context": "..."} on stdout.
"""
import json
import sys
from pathlib import Path


def retrieval_function(question: str) -> str:
    """Return relevant context for the given question."""
    script_dir = Path(__file__).parent.resolve()
    parts = []
    for path in sorted((script_dir / "context").rglob("*")):
        if path.is_file():
            parts.append(path.read_text(encoding="utf-8"))
    return "\n\n".join(parts)


if __name__ == "__main__":
    request = json.load(sys.stdin)
    json.dump({"context": retrieval_function(request["question"])}, sys.stdout)
