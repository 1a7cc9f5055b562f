"""The generate-execute-continue loop.

One round of the loop asks the completion backend for the next block,
stopping at the end-of-block token with a per-block token cap. A closed code
block is executed immediately and its rendered result is appended to the
prompt as an execution block, so the model reads real outputs instead of
predicting them; generation then resumes. The loop rules:

1. Each model call stops at end-of-block, capped at the per-block token
   budget.
2. Output missing its end-of-block hit the cap; the block is force-closed
   and recorded, and the loop continues.
3. A closed code block is executed and the rendered result appended as an
   execution block (never model-generated). Execution blocks count against
   the block budget.
4. An end-of-message after a closed block ends the run normally.
5. Reaching the block budget ends the run with BLOCK_LIMIT.

Output that opens no block at all (empty, an execution opener, or trailing
garbage after a close) force-closes the whole message instead; the trace
records TOKEN_LIMIT_FORCED_CLOSE so callers can tell a salvaged partial
solution from a clean finish.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Sequence

import requests

from .executor import CodeExecutor, ExecutionResult, ExecutorError, render_for_model
from .format import (
    DEFAULT_TOKENS,
    BlockKind,
    Conversation,
    LceBlock,
    Message,
    Role,
    SpecialTokenSet,
    serialize,
)

log = logging.getLogger(__name__)

SYSTEM_INSTRUCTION = "Below is a math problem. Please solve it step by step."

DEFAULT_MAX_BLOCKS = 32
DEFAULT_MAX_NEW_TOKENS = 512


class Decoding(Enum):
    GREEDY = "greedy"


class ModelError(Exception):
    """The completion backend failed after retries."""


class ModelClient(Protocol):
    """A completion backend: prompt in, continuation out.

    Implementations must be deterministic under greedy decoding and must
    return at most one stop sequence, as a suffix if present.
    """

    def complete(self, prompt: str, stop: Sequence[str], max_new_tokens: int) -> str: ...


@dataclass(frozen=True)
class GenerationConfig:
    max_blocks: int = DEFAULT_MAX_BLOCKS
    max_new_tokens_per_block: int = DEFAULT_MAX_NEW_TOKENS
    decoding: Decoding = Decoding.GREEDY
    stop_sequences: tuple[str, ...] | None = None  # None: derive [end_of_block]

    def __post_init__(self) -> None:
        if self.max_blocks < 1 or self.max_new_tokens_per_block < 1:
            raise ValueError("block and token budgets must be at least 1")

    def stops(self, tokens: SpecialTokenSet) -> list[str]:
        if self.stop_sequences is not None:
            return list(self.stop_sequences)
        return [tokens.end_of_block]


class Termination(Enum):
    END_OF_MESSAGE = "end_of_message"
    BLOCK_LIMIT = "block_limit"
    TOKEN_LIMIT_FORCED_CLOSE = "token_limit_forced_close"
    EXECUTOR_FAILURE = "executor_failure"
    MODEL_ERROR = "model_error"


@dataclass
class SolveTrace:
    conversation: Conversation
    termination: Termination
    per_block_timing: list[float] = field(default_factory=list)
    executions: list[ExecutionResult] = field(default_factory=list)
    forced_block_closes: list[int] = field(default_factory=list)


def format_prompt(question: str, tokens: SpecialTokenSet = DEFAULT_TOKENS) -> str:
    """The generation prefix for a question: system and user messages plus
    the assistant role token, ready for the model to continue."""
    if not question:
        raise ValueError("question must be non-empty")
    prefix = serialize(
        Conversation(
            (
                Message(Role.SYSTEM, (LceBlock(BlockKind.TEXT, SYSTEM_INSTRUCTION),)),
                Message(Role.USER, (LceBlock(BlockKind.TEXT, question),)),
            )
        ),
        tokens,
    )
    return prefix + tokens.role_tokens[Role.ASSISTANT]


def _sanitize_feedback(rendered: str, tokens: SpecialTokenSet) -> str:
    # Execution output must not smuggle delimiters into the conversation.
    for tok in tokens.all_tokens:
        while tok in rendered:
            rendered = rendered.replace(tok, tok[0] + " " + tok[1:])
    return rendered


class _Outcome(Enum):
    BLOCK = "block"
    MESSAGE_END = "message_end"
    MALFORMED = "malformed"


def _interpret_output(
    out: str, tokens: SpecialTokenSet
) -> tuple[_Outcome, BlockKind | None, str, bool]:
    """Classify one model continuation.

    Returns (outcome, kind, content, closed). Only text and code openers are
    accepted; the model never legitimately produces execution blocks.
    """
    s = out.lstrip()
    if s.startswith(tokens.end_of_message):
        return _Outcome.MESSAGE_END, None, "", True
    for kind in (BlockKind.TEXT, BlockKind.CODE):
        opener = tokens.block_tokens[kind]
        if not s.startswith(opener):
            continue
        body = s[len(opener) :]
        eob = tokens.end_of_block
        if body.endswith(eob):
            content = body[: -len(eob)]
            if _contains_token(content, tokens):
                return _Outcome.MALFORMED, None, "", False
            return _Outcome.BLOCK, kind, content, True
        if _contains_token(body, tokens):
            return _Outcome.MALFORMED, None, "", False
        return _Outcome.BLOCK, kind, body, False
    return _Outcome.MALFORMED, None, "", False


def _contains_token(s: str, tokens: SpecialTokenSet) -> bool:
    return any(tok in s for tok in tokens.all_tokens)


def solve(
    question: str,
    model: ModelClient,
    executor: CodeExecutor,
    cfg: GenerationConfig = GenerationConfig(),
    tokens: SpecialTokenSet = DEFAULT_TOKENS,
) -> SolveTrace:
    """Run the full loop for one question and return the finished trace.

    The trace conversation always satisfies the format invariants, whatever
    the termination reason. A backend failure before any block was produced
    propagates as ModelError; after that, failures are recorded in the trace
    so partial work survives.
    """
    prompt = format_prompt(question, tokens)
    stops = cfg.stops(tokens)
    eob = tokens.end_of_block
    blocks: list[LceBlock] = []
    executions: list[ExecutionResult] = []
    timings: list[float] = []
    forced: list[int] = []
    termination: Termination | None = None

    while termination is None:
        started = time.monotonic()
        try:
            out = model.complete(prompt, stops, cfg.max_new_tokens_per_block)
        except ModelError:
            if not blocks:
                raise
            termination = Termination.MODEL_ERROR
            break
        outcome, kind, content, closed = _interpret_output(out, tokens)

        if outcome is _Outcome.MESSAGE_END:
            termination = Termination.END_OF_MESSAGE
            break
        if outcome is _Outcome.MALFORMED:
            log.warning("model output opened no block; force-closing the message")
            termination = Termination.TOKEN_LIMIT_FORCED_CLOSE
            break

        assert kind is not None
        if not closed:
            forced.append(len(blocks))
        blocks.append(LceBlock(kind, content))
        timings.append(time.monotonic() - started)
        prompt += tokens.block_tokens[kind] + content + eob
        if len(blocks) >= cfg.max_blocks:
            termination = Termination.BLOCK_LIMIT
            break

        if kind is BlockKind.CODE:
            try:
                result = executor.execute(content)
            except ExecutorError:
                log.warning("executor session lost; ending run")
                termination = Termination.EXECUTOR_FAILURE
                break
            executions.append(result)
            timings.append(result.elapsed)
            rendered = _sanitize_feedback(
                render_for_model(result, executor.max_chars), tokens
            )
            blocks.append(LceBlock(BlockKind.EXECUTION, rendered))
            prompt += tokens.block_tokens[BlockKind.EXECUTION] + rendered + eob
            if len(blocks) >= cfg.max_blocks:
                termination = Termination.BLOCK_LIMIT

    conversation = Conversation(
        (
            Message(Role.SYSTEM, (LceBlock(BlockKind.TEXT, SYSTEM_INSTRUCTION),)),
            Message(Role.USER, (LceBlock(BlockKind.TEXT, question),)),
            Message(Role.ASSISTANT, tuple(blocks)),
        )
    )
    return SolveTrace(
        conversation=conversation,
        termination=termination,
        per_block_timing=timings,
        executions=executions,
        forced_block_closes=forced,
    )


class HttpCompletionClient:
    """Adapter for an HTTP completion endpoint.

    Sends ``{"prompt", "stop", "max_tokens", "temperature"}`` (plus
    ``"model"`` when configured) as JSON to the endpoint URL and reads
    ``choices[0].text`` from the response, the de-facto completion API
    shape. Backends disagree on whether the matched stop sequence is
    included in the text; when the response says ``finish_reason: "stop"``
    and a single stop sequence is in play, the adapter re-appends it if
    missing so callers always see the stop as a suffix. Transport failures
    are retried twice with backoff before surfacing as ModelError. Auth is
    taken from the named environment variable, never from flags or config
    values.
    """

    RETRIES = 2
    BACKOFF_S = 0.5

    def __init__(
        self,
        base_url: str,
        model_name: str | None = None,
        auth_token: str | None = None,
        temperature: float = 0.0,
        request_timeout: float = 120.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url
        self.model_name = model_name
        self.auth_token = auth_token
        self.temperature = temperature
        self.request_timeout = request_timeout
        self._http = session or requests.Session()

    def complete(self, prompt: str, stop: Sequence[str], max_new_tokens: int) -> str:
        payload: dict = {
            "prompt": prompt,
            "stop": list(stop),
            "max_tokens": max_new_tokens,
            "temperature": self.temperature,
        }
        if self.model_name:
            payload["model"] = self.model_name
        headers = {}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        last_error: Exception | None = None
        for attempt in range(self.RETRIES + 1):
            if attempt:
                time.sleep(self.BACKOFF_S * attempt)
            try:
                resp = self._http.post(
                    self.base_url,
                    json=payload,
                    headers=headers,
                    timeout=self.request_timeout,
                )
                if resp.status_code >= 500:
                    last_error = ModelError(f"server error {resp.status_code}")
                    continue
                resp.raise_for_status()
                data = resp.json()
                choice = data["choices"][0]
                text = choice["text"]
                if (
                    choice.get("finish_reason") == "stop"
                    and len(stop) == 1
                    and not text.endswith(stop[0])
                ):
                    text += stop[0]
                return text
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
        raise ModelError(f"completion request failed: {last_error}") from last_error
