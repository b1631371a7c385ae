"""Embedding cosine similarity for scripts running inside an iteration directory."""
import json
import math
import os
import urllib.request

EMBEDDING_MODEL = os.environ.get("EMBEDDING_MODEL", "text-embedding-3-small")


def _embed(texts):
    base = os.environ.get("OPENROUTER_API_BASE", "").rstrip("/")
    request = urllib.request.Request(
        base + "/embeddings",
        data=json.dumps({"model": EMBEDDING_MODEL, "input": list(texts)}).encode("utf-8"),
        headers={
            "Content-Type": "application/json",
            "Authorization": "Bearer " + os.environ.get("OPENROUTER_API_KEY", ""),
        },
    )
    with urllib.request.urlopen(request, timeout=30) as response:
        body = json.loads(response.read().decode("utf-8"))
    rows = sorted(body["data"], key=lambda item: item["index"])
    return [_normalize(row["embedding"]) for row in rows]


def _normalize(vector):
    norm = math.sqrt(sum(x * x for x in vector))
    return [x / norm for x in vector]


def compute_embedding_similarity(strings_a, strings_b):
    """Matrix of shape (len(strings_a), len(strings_b)) with cosine similarities."""
    if not strings_a or not strings_b:
        raise ValueError("both string lists must be non-empty")
    a = _embed(strings_a)
    b = _embed(strings_b)
    return [[sum(x * y for x, y in zip(row_a, row_b)) for row_b in b] for row_a in a]
