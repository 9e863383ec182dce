"""Rephrase clients and the guarded rephrase step.

A client turns a :class:`RephraseRequest` into text. The wire format of the
HTTP client is one POST of ``{"kind", "prompt", "text"}`` answered by
``{"text"}``. Failures never abort a run: the original text is kept and the
result carries a flag instead.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Protocol

import httpx

from ..errors import ClientError, ConfigError
from .prompts import RephraseRequest, build_prompt

FLAG_REJECTED = "rephrase-rejected"
FLAG_FAILED = "rephrase-failed"
FLAG_TRIMMED = "rephrase-trimmed"

STUB_MODES = ("identity", "drop-target", "canned", "fail")


def _word(label: str) -> str:
    return r"(?<!\w)" + re.escape(label) + r"(?!\w)"


class RephraseClient(Protocol):
    def complete(self, req: RephraseRequest) -> str: ...


@dataclass
class StubRephraseClient:
    """Deterministic offline client.

    identity returns the input text, drop-target replaces the target label,
    canned returns a fixed string and fail raises ClientError.
    """

    mode: str = "identity"
    canned: str = ""
    replacement: str = "thing"

    def __post_init__(self):
        if self.mode not in STUB_MODES:
            raise ValueError(f"unknown stub mode {self.mode!r}; expected one of {STUB_MODES}")

    def complete(self, req: RephraseRequest) -> str:
        if self.mode == "identity":
            return req.text
        if self.mode == "canned":
            return self.canned
        if self.mode == "fail":
            raise ClientError("stub client configured to fail")
        if not req.target_label:
            return req.text
        return re.sub(_word(req.target_label), self.replacement, req.text, flags=re.IGNORECASE)


class HttpRephraseClient:
    def __init__(self, url: str, timeout: float = 30.0, transport: Optional[httpx.BaseTransport] = None):
        self.url = url
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def complete(self, req: RephraseRequest) -> str:
        body = {"kind": req.kind, "prompt": build_prompt(req), "text": req.text}
        try:
            resp = self._client.post(self.url, json=body)
            resp.raise_for_status()
            doc = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise ClientError(f"rephrase request to {self.url} failed: {exc}") from None
        text = doc.get("text") if isinstance(doc, dict) else None
        if not isinstance(text, str):
            raise ClientError(f"rephrase response from {self.url} has no text field")
        return text

    def close(self) -> None:
        self._client.close()


@dataclass(frozen=True)
class RephraseResult:
    text: str
    flags: tuple = ()


_SENTENCE_END = re.compile(r"(?<=[.!?])\s+(?=\S)")


def split_sentences(text: str) -> list[str]:
    text = " ".join(text.split())
    return [s for s in _SENTENCE_END.split(text) if s]


def mentions(text: str, label: str) -> bool:
    return re.search(_word(label), text, flags=re.IGNORECASE) is not None


def rephrase(req: RephraseRequest, client: RephraseClient) -> RephraseResult:
    try:
        raw = client.complete(req)
    except (ClientError, OSError, TimeoutError):
        return RephraseResult(req.text, (FLAG_FAILED,))
    flags = []
    if req.is_referral:
        sentences = split_sentences(raw)
        if not sentences:
            return RephraseResult(req.text, (FLAG_REJECTED,))
        if len(sentences) > 1:
            flags.append(FLAG_TRIMMED)
        out = sentences[0]
        if req.target_label and not mentions(out, req.target_label):
            return RephraseResult(req.text, (FLAG_REJECTED,))
    else:
        out = " ".join(raw.split())
        if not out:
            return RephraseResult(req.text, (FLAG_REJECTED,))
    return RephraseResult(out, tuple(flags))


def rephrase_many(reqs: Iterable[RephraseRequest], client: RephraseClient, max_in_flight: int = 4) -> list[RephraseResult]:
    """Results in request order, whatever order the calls complete in."""
    reqs = list(reqs)
    if max_in_flight <= 1 or len(reqs) <= 1:
        return [rephrase(r, client) for r in reqs]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(lambda r: rephrase(r, client), reqs))


def make_client(kind: str, url: Optional[str] = None, stub_mode: str = "identity", timeout: float = 30.0) -> Optional[RephraseClient]:
    """Client for a ``--rephrase`` choice: none, stub or http."""
    if kind == "none":
        return None
    if kind == "stub":
        return StubRephraseClient(stub_mode)
    if kind == "http":
        if not url:
            raise ConfigError("rephrase=http needs a rephrase endpoint URL")
        return HttpRephraseClient(url, timeout)
    raise ConfigError(f"unknown rephrase client {kind!r}")
