"""Shared test machinery: generators, scripted backends, a loopback server."""

from __future__ import annotations

import json
import random
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

from lcekit.executor import ExecStatus, ExecutionResult
from lcekit.format import (
    DEFAULT_TOKENS,
    BlockKind,
    Conversation,
    LceBlock,
    Message,
    Role,
    SpecialTokenSet,
)
from lcekit.orchestrator import ModelError

_CONTENT_ALPHABET = (
    "abcdefgh XYZ0123456789 \n\t<>|{}$\\/#=+-*'\"αβγ✓，。"
)


def random_content(rng: random.Random, tokens: SpecialTokenSet, max_len: int = 40) -> str:
    """Content that never embeds a complete special token."""
    while True:
        s = "".join(
            rng.choice(_CONTENT_ALPHABET) for _ in range(rng.randrange(max_len))
        )
        if not any(tok in s for tok in tokens.all_tokens):
            return s


def random_assistant_blocks(
    rng: random.Random, tokens: SpecialTokenSet, max_blocks: int = 6
) -> list[LceBlock]:
    blocks: list[LceBlock] = []
    for _ in range(rng.randrange(max_blocks + 1)):
        if blocks and blocks[-1].kind is BlockKind.CODE and rng.random() < 0.7:
            kind = BlockKind.EXECUTION
        else:
            kind = rng.choice((BlockKind.TEXT, BlockKind.CODE))
        blocks.append(LceBlock(kind, random_content(rng, tokens)))
    return blocks


def random_conversation(
    rng: random.Random, tokens: SpecialTokenSet = DEFAULT_TOKENS
) -> Conversation:
    messages: list[Message] = []
    if rng.random() < 0.5:
        messages.append(
            Message(Role.SYSTEM, (LceBlock(BlockKind.TEXT, random_content(rng, tokens)),))
        )
    for _ in range(rng.randrange(4)):
        role = rng.choice((Role.USER, Role.ASSISTANT))
        if role is Role.ASSISTANT:
            blocks = tuple(random_assistant_blocks(rng, tokens))
        else:
            blocks = tuple(
                LceBlock(BlockKind.TEXT, random_content(rng, tokens))
                for _ in range(rng.randrange(3))
            )
        messages.append(Message(role, blocks))
    return Conversation(tuple(messages))


class ScriptedModel:
    """Replays a fixed list of completions and records every prompt."""

    def __init__(self, outputs: list[str]):
        self.outputs = list(outputs)
        self.prompts: list[str] = []
        self.calls = 0

    def complete(self, prompt: str, stop, max_new_tokens: int) -> str:
        self.prompts.append(prompt)
        self.calls += 1
        if not self.outputs:
            raise ModelError("script exhausted")
        return self.outputs.pop(0)


class LoopingModel:
    """Emits the same completion forever (adversarial budget probe)."""

    def __init__(self, output: str):
        self.output = output
        self.calls = 0

    def complete(self, prompt: str, stop, max_new_tokens: int) -> str:
        self.calls += 1
        return self.output


class MockExecutor:
    """Returns scripted results and records the code it was asked to run."""

    def __init__(self, results: list[ExecutionResult] | None = None, max_chars: int = 2048):
        self.results = list(results) if results else []
        self.max_chars = max_chars
        self.codes: list[str] = []

    def execute(self, code: str, timeout_ms: int | None = None) -> ExecutionResult:
        self.codes.append(code)
        if self.results:
            return self.results.pop(0)
        return ExecutionResult(status=ExecStatus.OK, stdout="", value_repr="0")


class MockCompletionServer:
    """Loopback HTTP completion endpoint.

    Takes either a list of outputs to replay in order or a callable mapping
    the request payload to the completion text (useful under concurrency,
    where arrival order is not deterministic).
    """

    def __init__(self, script: list[str] | object):
        self.outputs = list(script) if isinstance(script, list) else None
        self.respond = script if not isinstance(script, list) else None
        self.requests: list[dict] = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length))
                outer.requests.append(payload)
                text = None
                if outer.respond is not None:
                    text = outer.respond(payload)
                elif outer.outputs:
                    text = outer.outputs.pop(0)
                if text is not None:
                    # a dict entry sets extra choice fields (finish_reason)
                    choice = {"text": text} if isinstance(text, str) else dict(text)
                    body = json.dumps({"choices": [choice]}).encode()
                    self.send_response(200)
                else:
                    body = b'{"error": "script exhausted"}'
                    self.send_response(500)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args) -> None:
                pass

        self._server = HTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1/completions"

    def __enter__(self) -> "MockCompletionServer":
        self._thread.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self._server.shutdown()
        self._server.server_close()
