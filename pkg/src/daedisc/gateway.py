"""Prompt assembly and pluggable skeleton generators.

The prompt for each loop is a deterministic function of a task contract
(role, completion rules, variable descriptions, requirement instructions),
the sampled in-context examples (worst first) and an empty target stub.
Generated completions are free text; ``parse_completion`` extracts the first
fenced ``equations`` block and an optional fenced ``requirements`` JSON block
and never raises, whatever bytes it is fed.

Two backends speak the same interface: an HTTP client for any
chat-completions endpoint (OpenAI wire format, API key from an environment
variable) and a scripted mock that replays a JSON file of completion batches
in order, which keeps engine runs byte-reproducible.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .fitting import Requirement, ScoredSkeleton

logger = logging.getLogger(__name__)

EQUATIONS_TAG = "equations"
REQUIREMENTS_TAG = "requirements"

_FENCE_RE = re.compile(r"```[ \t]*([A-Za-z0-9_-]*)[ \t]*\r?\n(.*?)```", re.DOTALL)


class BackendUnavailable(RuntimeError):
    """The generator produced nothing despite retries.

    ``permanent`` marks failures no retry can fix (an exhausted mock script),
    so the retry loop gives up immediately.
    """

    def __init__(self, message: str, permanent: bool = False):
        super().__init__(message)
        self.permanent = permanent


@dataclass(frozen=True)
class PromptContract:
    kind: str  # "de" | "ae"
    role: str
    completion_rules: str
    library_text: str
    requirement_rules: str


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    n_b: int = 4
    temperature: float = 1.2
    timeout: float = 60.0
    max_tokens: int = 1024

    def __post_init__(self):
        if self.n_b < 1:
            raise ValueError("n_b must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class Completion:
    skeleton_text: str
    requirements: tuple[Requirement, ...]
    raw: str


_GRAMMAR_RULES = """\
Write one equation per line and nothing else inside the block.
Differential form:  d<state>/dt = <expression>
Algebraic form:     <name> = <expression>
Expressions may use + - * / ^, parentheses, numeric literals, the unary
functions sin cos tan exp log sqrt tanh abs, the variables listed below, and
trainable parameter placeholders p0, p1, p2, ... for every unknown constant.
Exponents must be integer literals between -4 and 4.  Any other syntax or any
name not listed below fails to compile and wastes the attempt."""


def render_library(entries: Sequence) -> str:
    """Deterministic rendering of (name, unit, description, kind) entries."""
    if not entries:
        return "(no admitted variables yet)"
    lines = []
    for e in entries:
        lines.append(f"- {e.name} [{e.unit}] ({e.kind}): {e.description}")
    return "\n".join(lines)


def de_contract(state_names: Sequence[str], entries: Sequence) -> PromptContract:
    role = ("You model power-system component dynamics. Propose the structure of "
            "the state differential equations that generated the measured data.")
    library = (f"States (always available): {', '.join(state_names)}\n"
               f"Admitted variables:\n{render_library(entries)}")
    requirement_rules = (
        "If the equations need signals that are not admitted yet, declare them in a "
        'fenced block tagged "requirements" holding a JSON array of '
        '{"name": ..., "justification": ...} objects.')
    return PromptContract(kind="de", role=role, completion_rules=_GRAMMAR_RULES,
                          library_text=library, requirement_rules=requirement_rules)


def ae_contract(state_names: Sequence[str], entries: Sequence) -> PromptContract:
    role = ("You model power-system algebraic constraints. Propose explicit "
            "algebraic relations expressing each target variable from states "
            "and admitted variables.")
    library = (f"States (always available): {', '.join(state_names)}\n"
               f"Admitted variables:\n{render_library(entries)}")
    requirement_rules = (
        "If the relations need signals that are not admitted yet, declare them in a "
        'fenced block tagged "requirements" holding a JSON array of '
        '{"name": ..., "justification": ...} objects.')
    return PromptContract(kind="ae", role=role, completion_rules=_GRAMMAR_RULES,
                          library_text=library, requirement_rules=requirement_rules)


def _stub_lines(kind: str, target_names: Sequence[str]) -> str:
    if kind == "de":
        return "\n".join(f"d{name}/dt = " for name in target_names)
    return "\n".join(f"{name} = " for name in target_names)


def build_prompt(contract: PromptContract, examples: Sequence[ScoredSkeleton],
                 target_names: Sequence[str]) -> str:
    """Deterministic prompt text; examples must arrive ordered worst first."""
    parts = [
        contract.role,
        "",
        "Completion rules:",
        contract.completion_rules,
        "",
        contract.library_text,
        "",
        contract.requirement_rules,
    ]
    for example in examples:
        parts += [
            "",
            f"Example (score = {example.score:.6g}):",
            f"```{EQUATIONS_TAG}",
            example.canonical,
            "```",
        ]
    parts += [
        "",
        "Complete the following system. Respond with one fenced block tagged "
        f'"{EQUATIONS_TAG}" containing exactly these left-hand sides:',
        f"```{EQUATIONS_TAG}",
        _stub_lines(contract.kind, target_names),
        "```",
    ]
    return "\n".join(parts)


def _parse_requirements(body: str) -> tuple[Requirement, ...]:
    try:
        data = json.loads(body)
    except (json.JSONDecodeError, RecursionError):
        logger.debug("requirements block is not valid JSON; ignoring")
        return ()
    if not isinstance(data, list):
        logger.debug("requirements block is not a JSON array; ignoring")
        return ()
    out: list[Requirement] = []
    for item in data:
        if not isinstance(item, dict):
            continue
        name = item.get("name")
        if not isinstance(name, str) or not name.strip():
            continue
        justification = item.get("justification")
        kind_hint = item.get("kind")
        out.append(Requirement(
            name=name.strip(),
            justification=justification.strip() if isinstance(justification, str) else "",
            kind_hint=kind_hint.strip() if isinstance(kind_hint, str) else ""))
    return tuple(out)


def parse_completion(raw: str) -> Completion:
    """Total extraction: surrounding prose tolerated, nothing ever raises."""
    if not isinstance(raw, str):
        raw = str(raw)
    skeleton_text = ""
    requirements: tuple[Requirement, ...] = ()
    saw_requirements = False
    for match in _FENCE_RE.finditer(raw):
        tag = match.group(1).lower()
        body = match.group(2).strip()
        if tag in (REQUIREMENTS_TAG, "json"):
            if not saw_requirements:
                requirements = _parse_requirements(body)
                saw_requirements = True
            continue
        if not skeleton_text:
            skeleton_text = body
    return Completion(skeleton_text=skeleton_text, requirements=requirements, raw=raw)


class GeneratorBackend(Protocol):
    def complete(self, request: GenerationRequest) -> list[str]:
        """Raw completion texts; raises BackendUnavailable on failure."""


class MockBackend:
    """Replays scripted completion batches in order; single-threaded."""

    def __init__(self, batches: Sequence[Sequence[str]]):
        self._batches = [list(batch) for batch in batches]
        self._cursor = 0

    @classmethod
    def from_script(cls, path: str | Path) -> "MockBackend":
        data = json.loads(Path(path).read_text())
        if not isinstance(data, list) or not all(isinstance(b, list) for b in data):
            raise ValueError("mock script must be a JSON array of batches of strings")
        return cls(data)

    @property
    def exhausted(self) -> bool:
        return self._cursor >= len(self._batches)

    def complete(self, request: GenerationRequest) -> list[str]:
        if self.exhausted:
            raise BackendUnavailable("mock script exhausted", permanent=True)
        batch = self._batches[self._cursor]
        self._cursor += 1
        return list(batch)


class HttpBackend:
    """Chat-completions client: OpenAI wire format against any base URL."""

    def __init__(self, base_url: str, model: str,
                 api_key_env: str = "OPENAI_API_KEY",
                 system_prompt: str | None = None,
                 session: requests.Session | None = None):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.system_prompt = system_prompt
        self._session = session or requests.Session()

    def complete(self, request: GenerationRequest) -> list[str]:
        messages = []
        if self.system_prompt:
            messages.append({"role": "system", "content": self.system_prompt})
        messages.append({"role": "user", "content": request.prompt})
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "n": request.n_b,
            "max_tokens": request.max_tokens,
        }
        headers = {}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            response = self._session.post(
                f"{self.base_url}/chat/completions", json=payload,
                headers=headers, timeout=request.timeout)
            response.raise_for_status()
            data = response.json()
            texts = [choice["message"]["content"] for choice in data["choices"]]
        except (requests.RequestException, KeyError, TypeError, ValueError) as exc:
            raise BackendUnavailable(str(exc)) from exc
        return [t for t in texts if isinstance(t, str)]


def generate(request: GenerationRequest, backend: GeneratorBackend,
             attempts: int = 3, backoff: float = 0.5,
             sleep: Callable[[float], None] = time.sleep) -> list[Completion]:
    """Up to n_b parsed completions; retries transport failures with backoff."""
    last_error: Exception | None = None
    for attempt in range(attempts):
        try:
            texts = backend.complete(request)
        except BackendUnavailable as exc:
            last_error = exc
            if exc.permanent:
                break
            if attempt + 1 < attempts:
                sleep(backoff * (2.0 ** attempt))
            continue
        completions = [parse_completion(t) for t in texts[: request.n_b]]
        if completions:
            return completions
        last_error = BackendUnavailable("backend returned zero completions")
        if attempt + 1 < attempts:
            sleep(backoff * (2.0 ** attempt))
    raise BackendUnavailable(str(last_error) if last_error else "no completions")
