"""Batched chat-completion helpers for scripts running inside an iteration directory.

Talks to the OpenAI-compatible endpoint named by OPENROUTER_API_BASE using
SANDBOX_MODEL. Only the standard library is required; pydantic models are
accepted as schemas when pydantic is installed.
"""
import json
import os
import urllib.request
from concurrent.futures import ThreadPoolExecutor

MAX_CONCURRENCY = 50
MAX_LLM_CALLS = 100
MAX_ATTEMPTS = 3


def _post(payload):
    base = os.environ.get("OPENROUTER_API_BASE", "").rstrip("/")
    request = urllib.request.Request(
        base + "/chat/completions",
        data=json.dumps(payload).encode("utf-8"),
        headers={
            "Content-Type": "application/json",
            "Authorization": "Bearer " + os.environ.get("OPENROUTER_API_KEY", ""),
        },
    )
    with urllib.request.urlopen(request, timeout=120) as response:
        return json.loads(response.read().decode("utf-8"))


def _json_schema(schema):
    if hasattr(schema, "model_json_schema"):
        return schema.model_json_schema()
    return schema


def _coerce(schema, text):
    start = text.find("{")
    end = text.rfind("}")
    value = json.loads(text[start : end + 1] if start >= 0 and end > start else text)
    if hasattr(schema, "model_validate"):
        return schema.model_validate(value)
    return value


def _call_one(prompt, schema):
    payload = {
        "model": os.environ.get("SANDBOX_MODEL"),
        "temperature": 0,
        "messages": [{"role": "user", "content": prompt}],
    }
    if schema is not None:
        payload["response_format"] = {
            "type": "json_schema",
            "json_schema": {"name": "response", "schema": _json_schema(schema)},
        }
    last_error = None
    for _ in range(MAX_ATTEMPTS):
        try:
            body = _post(payload)
            text = body["choices"][0]["message"].get("content") or ""
            return text if schema is None else _coerce(schema, text)
        except Exception as err:  # retried up to MAX_ATTEMPTS
            last_error = err
    raise RuntimeError(f"LLM call failed after {MAX_ATTEMPTS} attempts: {last_error}")


def call_llm(prompts, schema=None):
    """Single prompt -> single result; list of prompts -> list of results."""
    is_single = isinstance(prompts, str)
    prompt_list = [prompts] if is_single else list(prompts)
    if len(prompt_list) > MAX_LLM_CALLS:
        raise ValueError(
            f"Number of prompts ({len(prompt_list)}) exceeds maximum allowed per batch ({MAX_LLM_CALLS})"
        )
    with ThreadPoolExecutor(max_workers=MAX_CONCURRENCY) as pool:
        results = list(pool.map(lambda p: _call_one(p, schema), prompt_list))
    return results[0] if is_single else results
