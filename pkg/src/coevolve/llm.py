"""Language-model synthesizer backend.

Prompts ask the model for a single fenced JSON AST in one of the two program
DSLs; replies are parsed and validated, with error feedback and bounded
retries. When retries run out the caller gets a ``SynthesisFallback`` and is
expected to substitute an offline mutation.

Wire format (generic chat-completions)::

    POST <endpoint>
    Content-Type: application/json
    Authorization: Bearer <key from env var>        # only when the var is set

    {"model": str, "temperature": float,
     "messages": [{"role": "system", "content": str},
                  {"role": "user", "content": str}, ...]}

    -> {"choices": [{"message": {"role": "assistant", "content": str}}]}
"""
from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from .heuristic_dsl import HeuristicProgram, HeuristicValidationError
from .instance_dsl import GeneratorProgram, ProgramValidationError

log = logging.getLogger(__name__)

NO_FEEDBACK = "(no prior feedback)"
DEFAULT_TOKEN_BUDGET = 3000

GENERATOR_GRAMMAR = """\
GeneratorProgram := {"version": 1, "root": Node, "prize"?: Prize, "budget"?: Budget}
Node :=
  {"node": "uniform"}
| {"node": "clusters", "k": int 1..16, "spread": real (0, 0.5]}
| {"node": "ring", "radius": real (0, 0.5], "jitter": real [0, 0.2]}
| {"node": "spiral", "turns": real [0.5, 6], "jitter": real [0, 0.2]}
| {"node": "grid", "jitter": real [0, 0.2]}
| {"node": "mix", "weights": [positive real, ...], "children": [Node, ...]}   (2..5 children)
| {"node": "transform", "a": r, "b": r, "c": r, "d": r, "tx": r, "ty": r, "child": Node}
      (a..d in [-2, 2], tx, ty in [-0.5, 0.5], |a*d - b*c| >= 0.05; applied about (0.5, 0.5))
| {"node": "perturb", "sigma": real [0, 0.2], "child": Node}
Prize := {"rule": "uniform" | "distance" | "cluster", "scale": real [0.1, 10]}     (OP only)
Budget := {"factor": real [0.5, 4]}      (OP only; max_len = factor * sqrt(n))
Limits: depth <= 8, at most 64 nodes. Output points are clamped to the unit
square and min-max normalized per axis."""

HEURISTIC_GRAMMAR = """\
HeuristicProgram := {"target": "gls_guide" | "aco_eta_tsp" | "aco_eta_op", "root": Expr}
Expr :=
  {"op": "dist"}                      n x n Euclidean distance matrix
| {"op": "prize_outer"}               P[i][j] = prize[j]   (aco_eta_op only)
| {"op": "const", "value": real}      value in [-1000, 1000]
| {"op": U, "arg": Expr}   U in neg, abs, sqrt, exp (exponent clamped to [-30, 30]),
                           log (log(1e-9 + |x|)), row_mean, row_min, row_max,
                           rank_row, normalize01, symmetrize
| {"op": B, "left": Expr, "right": Expr}   B in add, sub, mul, div (denominator
                           floored at 1e-9), min, max
Limits: depth <= 10, at most 96 nodes.
gls_guide: larger entries mark edges that guided local search should penalize first.
aco_eta_*: larger entries make an edge more attractive to ants; output is shifted
to be strictly positive."""

OUTPUT_CONTRACT = (
    "Reply with exactly one fenced code block tagged json containing the complete "
    "program AST and nothing else inside the block."
)


class ConnectorError(RuntimeError):
    """Network or protocol failure; retriable."""


@dataclass(frozen=True)
class ConnectorConfig:
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "default"
    temperature: float = 0.8
    max_retries: int = 3
    timeout: float = 60.0
    api_key_env: str = "COEVOLVE_API_KEY"

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        # the key itself is never stored, only the variable name
        return {
            "endpoint": self.endpoint,
            "model": self.model,
            "temperature": self.temperature,
            "max_retries": self.max_retries,
            "timeout": self.timeout,
            "api_key_env": self.api_key_env,
        }


@dataclass(frozen=True)
class PromptTemplate:
    role_preamble: str
    task_description: str
    dsl_grammar_excerpt: str
    parent_program: str
    reflection_context: tuple[str, ...] = ()
    output_contract: str = OUTPUT_CONTRACT
    token_budget: int = DEFAULT_TOKEN_BUDGET
    max_reflections: int = 3


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    truncated: bool
    reflections_used: tuple[str, ...]

    def __str__(self) -> str:
        return self.text


def estimate_tokens(text: str) -> int:
    """Rough token count: one token per four characters."""
    return (len(text) + 3) // 4


def _assemble(t: PromptTemplate, reflections: Sequence[str]) -> str:
    parts = [
        t.role_preamble.strip(),
        "## Task\n" + t.task_description.strip(),
        "## Program grammar\n" + t.dsl_grammar_excerpt.strip(),
        "## Parent program\n```json\n" + t.parent_program.strip() + "\n```",
    ]
    if reflections:
        body = "\n".join(f"{i + 1}. {r.strip()}" for i, r in enumerate(reflections))
    else:
        body = NO_FEEDBACK
    parts.append("## Prior feedback\n" + body)
    parts.append("## Output format\n" + t.output_contract.strip())
    return "\n\n".join(parts) + "\n"


def render_prompt(template: PromptTemplate) -> RenderedPrompt:
    """Deterministic prompt text; drops the oldest reflections to fit the budget."""
    refl = list(template.reflection_context[-template.max_reflections:])
    truncated = len(refl) < len(template.reflection_context)
    text = _assemble(template, refl)
    while refl and estimate_tokens(text) > template.token_budget:
        refl.pop(0)
        truncated = True
        text = _assemble(template, refl)
    return RenderedPrompt(text, truncated, tuple(refl))


_FENCE = re.compile(r"```(?:json|JSON)?[ \t]*\n(.*?)```", re.DOTALL)


def extract_fenced_json(text: str) -> Any:
    """Parse the first fenced code block of a reply as JSON."""
    m = _FENCE.search(text)
    if m is None:
        raise ValueError("no fenced code block found in the reply")
    return json.loads(m.group(1))


Transport = Callable[[str, dict[str, str], dict[str, Any], float], dict[str, Any]]


def http_transport(url: str, headers: dict[str, str], payload: dict[str, Any], timeout: float) -> dict[str, Any]:
    req = urllib.request.Request(url, data=json.dumps(payload).encode(), headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read().decode())
    except (urllib.error.URLError, TimeoutError, OSError, json.JSONDecodeError) as exc:
        raise ConnectorError(str(exc)) from exc


class TokenBucket:
    """Serialized-access rate limiter shared by concurrent callers."""

    def __init__(self, rate_per_s: float = 5.0, capacity: float = 5.0, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate_per_s
        self.capacity = capacity
        self.tokens = capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
                self._last = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                self._sleep((1 - self.tokens) / self.rate)


@dataclass
class SynthesisFallback:
    """Returned when no valid program was obtained; callers mutate offline instead."""

    attempts: int
    errors: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return False


class LLMConnector:
    def __init__(self, config: ConnectorConfig = ConnectorConfig(), transport: Transport | None = None,
                 bucket: TokenBucket | None = None):
        self.config = config
        self.transport = transport or http_transport
        self.bucket = bucket
        self.attempt_log: list[dict[str, Any]] = []

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def chat(self, messages: list[dict[str, str]]) -> str:
        if self.bucket is not None:
            self.bucket.acquire()
        payload = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages,
        }
        reply = self.transport(self.config.endpoint, self._headers(), payload, self.config.timeout)
        try:
            return str(reply["choices"][0]["message"]["content"])
        except (KeyError, IndexError, TypeError) as exc:
            raise ConnectorError(f"malformed chat response: {exc}") from exc

    def complete(self, prompt: str, system: str = "You are a concise optimization researcher.") -> str:
        return self.chat([{"role": "system", "content": system}, {"role": "user", "content": prompt}])

    def synthesize(self, template: PromptTemplate, kind: str):
        return synthesize_program(template, kind, self.config, connector=self)


def _parse_program(obj: Any, kind: str):
    if kind == "generator":
        return GeneratorProgram.from_dict(obj)
    if kind == "heuristic":
        return HeuristicProgram.from_dict(obj)
    raise ValueError(f"kind must be 'generator' or 'heuristic', got {kind!r}")


def synthesize_program(
    template: PromptTemplate,
    kind: str,
    config: ConnectorConfig = ConnectorConfig(),
    transport: Transport | None = None,
    connector: LLMConnector | None = None,
):
    """Ask the model for a program; returns the program or a ``SynthesisFallback``."""
    if kind not in ("generator", "heuristic"):
        raise ValueError(f"kind must be 'generator' or 'heuristic', got {kind!r}")
    conn = connector or LLMConnector(config, transport)
    prompt = render_prompt(template).text
    messages = [
        {"role": "system", "content": template.role_preamble.strip()},
        {"role": "user", "content": prompt},
    ]
    errors: list[str] = []
    attempts = 0
    for attempt in range(1 + conn.config.max_retries):
        attempts += 1
        try:
            reply = conn.chat(messages)
        except ConnectorError as exc:
            errors.append(f"transport: {exc}")
            conn.attempt_log.append({"attempt": attempt, "ok": False, "error": errors[-1]})
            log.warning("synthesis attempt %d failed: %s", attempt + 1, errors[-1])
            continue
        try:
            program = _parse_program(extract_fenced_json(reply), kind)
        except (ValueError, ProgramValidationError, HeuristicValidationError, TypeError) as exc:
            errors.append(str(exc))
            conn.attempt_log.append({"attempt": attempt, "ok": False, "error": errors[-1]})
            log.warning("synthesis attempt %d rejected: %s", attempt + 1, errors[-1])
            messages = messages + [
                {"role": "assistant", "content": reply},
                {"role": "user", "content": f"That reply was rejected: {exc}. {template.output_contract}"},
            ]
            continue
        conn.attempt_log.append({"attempt": attempt, "ok": True, "error": None})
        log.info("synthesis attempt %d produced program %s", attempt + 1, program.id)
        return program
    return SynthesisFallback(attempts, errors)


GENERATOR_PREAMBLE = (
    "You design procedural generators of hard Euclidean routing instances. "
    "A generator is a small program in a JSON DSL."
)
HEURISTIC_PREAMBLE = (
    "You design heuristic guidance matrices for routing metaheuristics. "
    "A heuristic is a matrix expression in a JSON DSL."
)


def generator_template(parent: GeneratorProgram, task: str, reflections: Sequence[str] = ()) -> PromptTemplate:
    return PromptTemplate(
        role_preamble=GENERATOR_PREAMBLE,
        task_description=(
            f"Modify the parent generator so that the {task} solver shows a larger relative "
            "optimality gap on its instances. Make one focused change."
        ),
        dsl_grammar_excerpt=GENERATOR_GRAMMAR,
        parent_program=parent.to_json(),
        reflection_context=tuple(reflections),
    )


def heuristic_template(parent: HeuristicProgram, task: str, reflections: Sequence[str] = ()) -> PromptTemplate:
    return PromptTemplate(
        role_preamble=HEURISTIC_PREAMBLE,
        task_description=(
            f"Modify the parent heuristic so that the {task} solver reaches a smaller relative "
            "optimality gap on the current hard instances. Consider rewriting the expression, "
            "switching strategy, or changing constants."
        ),
        dsl_grammar_excerpt=HEURISTIC_GRAMMAR,
        parent_program=parent.to_json(),
        reflection_context=tuple(reflections),
    )
