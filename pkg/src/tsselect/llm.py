"""Chat-completion client with live, record and replay modes.

Replay mode reads recorded responses from a fixture directory (one JSON file
per request hash) and never opens a network connection. Live mode posts an
OpenAI-style chat-completion request, retries transient failures with
exponential backoff, and honours per-profile concurrency and rate limits.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import (EndpointUnreachable, FixtureMiss, HashCollisionGuard, MissingCredential,
                     ProviderError, StoreUnwritable, UsageError)

log = logging.getLogger(__name__)

LIVE, RECORD, REPLAY = "live", "record", "replay"


@dataclass(frozen=True)
class ProviderProfile:
    name: str
    endpoint: str = ""
    model: str = ""
    credential_env: str = ""
    auth_header: str = "Authorization"
    auth_template: str = "Bearer {credential}"
    text_path: str = "choices.0.message.content"
    input_tokens_path: str = "usage.prompt_tokens"
    output_tokens_path: str = "usage.completion_tokens"
    max_in_flight: int = 4
    requests_per_minute: float = 60.0
    retries: int = 3
    backoff_seconds: float = 1.0
    timeout_seconds: float = 120.0
    temperature: float = 0.0
    max_output_tokens: int = 1024


def load_profiles(path) -> dict:
    """Read ``[profiles.<name>]`` tables from a TOML file."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    out = {}
    known = set(ProviderProfile.__dataclass_fields__)
    for name, table in doc.get("profiles", {}).items():
        unknown = set(table) - known
        if unknown:
            raise UsageError(f"profile {name!r}: unknown keys {sorted(unknown)}")
        out[name] = ProviderProfile(name=name, **{k: v for k, v in table.items() if k != "name"})
    return out


@dataclass(frozen=True)
class CompletionRequest:
    prompt_text: str
    provider_profile: str
    max_output_tokens: int = 1024
    temperature: float = 0.0

    def __post_init__(self):
        if not self.prompt_text:
            raise UsageError("prompt_text must be non-empty")
        if self.temperature < 0:
            raise UsageError("temperature must be >= 0")

    @property
    def key(self) -> str:
        return request_hash(self.provider_profile, self.prompt_text)


@dataclass(frozen=True)
class CompletionResult:
    text: str
    input_tokens: int
    output_tokens: int
    latency_seconds: float
    attempts: int = 1
    source: str = LIVE
    tokens_approximated: bool = False


def request_hash(profile: str, prompt_text: str) -> str:
    payload = json.dumps([profile, prompt_text], ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def approx_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


def _dig(doc, path: str):
    cur = doc
    for part in path.split("."):
        if isinstance(cur, list):
            try:
                cur = cur[int(part)]
            except (ValueError, IndexError):
                return None
        elif isinstance(cur, dict):
            cur = cur.get(part)
        else:
            return None
        if cur is None:
            return None
    return cur


class FixtureStore:
    """Directory of recorded completions, one ``<hash>.json`` file each."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path_for(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def load(self, req: CompletionRequest) -> dict:
        key = req.key
        p = self.path_for(key)
        if not p.is_file():
            raise FixtureMiss(key)
        doc = json.loads(p.read_text("utf-8"))
        if doc.get("request_text") != req.prompt_text:
            raise FixtureMiss(key)
        return doc

    def keys(self) -> list:
        return sorted(p.stem for p in self.directory.glob("*.json"))


def record_fixture(req: CompletionRequest, result: CompletionResult, store: FixtureStore,
                   force: bool = False, recorded_at: str | None = None) -> Path:
    """Persist ``result`` under the request hash.

    A different prompt under the same hash is always refused. Replacing an
    existing response with a different one needs ``force``.
    """
    key = req.key
    path = store.path_for(key)
    if path.exists():
        old = json.loads(path.read_text("utf-8"))
        if old.get("request_text") != req.prompt_text:
            raise HashCollisionGuard(key, "stored prompt text differs")
        if old.get("response_text") != result.text and not force:
            raise HashCollisionGuard(key, "stored response differs; pass force to replace it")
    doc = {
        "hash": key,
        "profile": req.provider_profile,
        "request_text": req.prompt_text,
        "response_text": result.text,
        "input_tokens": result.input_tokens,
        "output_tokens": result.output_tokens,
        "tokens_approximated": result.tokens_approximated,
        "latency_seconds": result.latency_seconds,
        "attempts": result.attempts,
        "recorded_at": recorded_at or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    try:
        store.directory.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        tmp.replace(path)
    except OSError as exc:
        raise StoreUnwritable(store.directory, exc) from exc
    return path


class _RateLimiter:
    def __init__(self, per_minute: float, clock=time.monotonic, sleep=time.sleep):
        self.interval = 60.0 / per_minute if per_minute > 0 else 0.0
        self.clock = clock
        self.sleep = sleep
        self.lock = threading.Lock()
        self.next_at = 0.0

    def wait(self):
        with self.lock:
            now = self.clock()
            at = max(now, self.next_at)
            self.next_at = at + self.interval
        if at > now:
            self.sleep(at - now)


@dataclass
class _ProfileState:
    semaphore: threading.BoundedSemaphore
    limiter: _RateLimiter


_TRANSIENT = {408, 409, 429, 500, 502, 503, 504}


@dataclass
class LlmClient:
    """Shareable across threads; at most ``max_in_flight`` live requests per profile."""

    profiles: dict
    mode: str = REPLAY
    store: FixtureStore | None = None
    http: object = None          # an httpx.Client; created lazily in live mode
    sleep: object = time.sleep
    clock: object = time.monotonic
    env: dict | None = None
    calls: list = field(default_factory=list)  # every CompletionResult handed out
    _state: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.mode not in (LIVE, RECORD, REPLAY):
            raise UsageError(f"mode must be live, record or replay, got {self.mode!r}")
        if self.mode in (RECORD, REPLAY) and self.store is None:
            raise UsageError(f"{self.mode} mode needs a fixture store")

    def profile(self, name: str) -> ProviderProfile:
        if name not in self.profiles:
            raise UsageError(f"unknown provider profile {name!r}")
        return self.profiles[name]

    def request(self, prompt_text: str, profile: str) -> CompletionRequest:
        p = self.profile(profile)
        return CompletionRequest(prompt_text, profile, p.max_output_tokens, p.temperature)

    def complete(self, req: CompletionRequest) -> CompletionResult:
        if self.mode == REPLAY:
            result = self._replay(req)
        else:
            result = self._live(req)
            if self.mode == RECORD:
                record_fixture(req, result, self.store)
        with self._lock:
            self.calls.append(result)
        return result

    def _replay(self, req):
        doc = self.store.load(req)
        return CompletionResult(
            text=doc["response_text"],
            input_tokens=int(doc["input_tokens"]),
            output_tokens=int(doc["output_tokens"]),
            latency_seconds=float(doc.get("latency_seconds", 0.0)),
            attempts=int(doc.get("attempts", 1)),
            source=REPLAY,
            tokens_approximated=bool(doc.get("tokens_approximated", False)),
        )

    def _profile_state(self, p: ProviderProfile) -> _ProfileState:
        with self._lock:
            st = self._state.get(p.name)
            if st is None:
                st = _ProfileState(threading.BoundedSemaphore(max(1, p.max_in_flight)),
                                   _RateLimiter(p.requests_per_minute, self.clock, self.sleep))
                self._state[p.name] = st
            return st

    def _live(self, req):
        p = self.profile(req.provider_profile)
        env = os.environ if self.env is None else self.env
        headers = {"Content-Type": "application/json"}
        if p.credential_env:
            cred = env.get(p.credential_env)
            if not cred:
                raise MissingCredential(p.credential_env)
            headers[p.auth_header] = p.auth_template.format(credential=cred)
        if not p.endpoint:
            raise UsageError(f"profile {p.name!r} has no endpoint")
        body = {
            "model": p.model,
            "messages": [{"role": "user", "content": req.prompt_text}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        http = self.http
        if http is None:
            import httpx

            http = self.http = httpx.Client(timeout=p.timeout_seconds)
        st = self._profile_state(p)
        with st.semaphore:
            return self._post_with_retries(http, p, headers, body, req, st)

    def _post_with_retries(self, http, p, headers, body, req, st):
        import httpx

        t0 = time.perf_counter()
        last = None
        for attempt in range(1, p.retries + 2):
            st.limiter.wait()
            try:
                resp = http.post(p.endpoint, json=body, headers=headers)
            except httpx.TransportError as exc:
                last = exc
                log.warning("%s attempt %d failed: %s", p.name, attempt, exc)
            else:
                if resp.status_code == 200:
                    return self._result(resp, p, req, attempt, time.perf_counter() - t0)
                if resp.status_code not in _TRANSIENT:
                    raise ProviderError(resp.status_code, resp.text)
                last = ProviderError(resp.status_code, resp.text)
                log.warning("%s attempt %d got status %d", p.name, attempt, resp.status_code)
            if attempt <= p.retries:
                self.sleep(p.backoff_seconds * 2 ** (attempt - 1))
        if isinstance(last, ProviderError):
            raise last
        raise EndpointUnreachable(p.endpoint, p.retries + 1, last)

    def _result(self, resp, p, req, attempts, latency):
        try:
            doc = resp.json()
        except ValueError:
            raise ProviderError(resp.status_code, resp.text, "provider returned non-JSON body") from None
        text = _dig(doc, p.text_path)
        if not isinstance(text, str):
            raise ProviderError(resp.status_code, resp.text, f"no text at {p.text_path!r}")
        tin, tout = _dig(doc, p.input_tokens_path), _dig(doc, p.output_tokens_path)
        approximated = not (isinstance(tin, int) and isinstance(tout, int))
        if approximated:
            tin, tout = approx_tokens(req.prompt_text), approx_tokens(text)
        return CompletionResult(text, int(tin), int(tout), latency, attempts, LIVE, approximated)

    def close(self):
        if self.http is not None and hasattr(self.http, "close"):
            self.http.close()


def result_to_dict(result: CompletionResult) -> dict:
    return asdict(result)
