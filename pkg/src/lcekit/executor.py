"""Persistent code-execution sessions over an external kernel process.

The kernel speaks a newline-delimited JSON protocol on its standard streams:

- handshake: the kernel emits ``{"op": "ready"}`` on startup
- request:   ``{"id": <int>, "op": "exec", "code": <string>}``
- response:  ``{"id": <int>, "status": "ok"|"exception", "stdout": <string>,
  "value": <string|null>, "error": <string|null>}``

Frames are single lines with all strings JSON-escaped; the kernel's own
diagnostics go to standard error. A session owns one kernel process and
serializes requests; distinct sessions are fully independent.

No OS-level sandboxing is applied here. Operators who need isolation can
wrap the kernel command (for example with bwrap or a container runtime);
the session only cares that the wrapped command speaks the protocol.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import signal
import subprocess
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import IO, Mapping, Protocol, Sequence

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_MS = 30_000
DEFAULT_MAX_CHARS = 2_048
HANDSHAKE_TIMEOUT_S = 5.0
TRUNCATION_MARKER = "...[truncated]..."
TIMEOUT_NOTICE = "[execution timed out]"

_EOF = object()


class ExecStatus(Enum):
    OK = "ok"
    EXCEPTION = "exception"
    TIMEOUT = "timeout"
    PROTOCOL_ERROR = "protocol_error"


class SessionState(Enum):
    LIVE = "live"
    DEAD = "dead"


class ExecutorError(Exception):
    pass


class SpawnError(ExecutorError):
    pass


class HandshakeTimeout(ExecutorError):
    pass


class SessionDead(ExecutorError):
    pass


@dataclass(frozen=True)
class ExecutionResult:
    """Outcome of running one code block in a session.

    ``value_repr`` is the notebook-style repr of a trailing expression, if
    the kernel reported one. ``truncated`` means the rendered form hit the
    session's character budget, in which case the render is exactly
    ``max_chars`` long.
    """

    status: ExecStatus
    stdout: str = ""
    value_repr: str | None = None
    error_repr: str | None = None
    truncated: bool = False
    elapsed: float = 0.0


class CodeExecutor(Protocol):
    """What the solve loop needs from an executor."""

    max_chars: int

    def execute(self, code: str, timeout_ms: int | None = None) -> ExecutionResult: ...


def _render_body(result: ExecutionResult) -> str:
    if result.status is ExecStatus.TIMEOUT:
        return TIMEOUT_NOTICE
    if result.status is ExecStatus.PROTOCOL_ERROR:
        return f"[execution failed: {result.error_repr or 'protocol error'}]"
    tail = result.value_repr if result.status is ExecStatus.OK else result.error_repr
    body = result.stdout
    if tail:
        if body and not body.endswith("\n"):
            body += "\n"
        body += tail
    return body


def render_for_model(result: ExecutionResult, max_chars: int = DEFAULT_MAX_CHARS) -> str:
    """Deterministic text form of a result, as fed back into the prompt.

    Ok results render stdout followed by the value repr on its own line;
    exceptions render stdout followed by the error repr; timeouts render a
    fixed notice. Output over budget is middle-truncated to exactly
    ``max_chars`` characters around a marker.
    """
    body = _render_body(result)
    if len(body) <= max_chars:
        return body
    keep = max_chars - len(TRUNCATION_MARKER)
    if keep <= 0:
        return TRUNCATION_MARKER[:max_chars]
    head = (keep + 1) // 2
    return body[:head] + TRUNCATION_MARKER + body[head + len(body) - keep :]


class KernelSession:
    """A live kernel process plus the request/response bookkeeping around it.

    Request ids increase monotonically for the lifetime of the session, even
    across internal restarts. A timeout or protocol violation kills and
    respawns the kernel (losing its namespace); if the respawn fails the
    session goes dead and further execute calls raise SessionDead.
    """

    def __init__(
        self,
        kernel_command: Sequence[str],
        env: Mapping[str, str] | None = None,
        *,
        timeout_ms: int = DEFAULT_TIMEOUT_MS,
        max_chars: int = DEFAULT_MAX_CHARS,
        handshake_timeout: float = HANDSHAKE_TIMEOUT_S,
    ):
        self.kernel_command = list(kernel_command)
        self.env = dict(env) if env is not None else None
        self.timeout_ms = timeout_ms
        self.max_chars = max_chars
        self.handshake_timeout = handshake_timeout
        self.state = SessionState.DEAD
        self._proc: subprocess.Popen[str] | None = None
        self._lines: queue.Queue[object] = queue.Queue()
        self._next_id = 0
        self._spawn()

    # -- lifecycle ---------------------------------------------------------

    def _spawn(self) -> None:
        full_env = None
        if self.env is not None:
            full_env = {**os.environ, **self.env}
        try:
            self._proc = subprocess.Popen(
                self.kernel_command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,  # kernel diagnostics flow through
                env=full_env,
                text=True,
                encoding="utf-8",
                bufsize=1,
                start_new_session=True,
            )
        except OSError as exc:
            raise SpawnError(f"cannot start kernel {self.kernel_command!r}: {exc}") from exc
        self._lines = queue.Queue()
        threading.Thread(
            target=_pump_lines, args=(self._proc.stdout, self._lines), daemon=True
        ).start()
        line = self._read_line(self.handshake_timeout)
        frame = _try_json(line) if isinstance(line, str) else None
        if frame is None or frame.get("op") != "ready":
            self._kill()
            raise HandshakeTimeout(
                f"kernel did not send a ready frame within {self.handshake_timeout}s"
            )
        self.state = SessionState.LIVE

    def _restart(self) -> None:
        self._kill()
        try:
            self._spawn()
        except ExecutorError as exc:
            log.warning("kernel restart failed: %s", exc)
            self.state = SessionState.DEAD

    def _kill(self) -> None:
        proc = self._proc
        self._proc = None
        self.state = SessionState.DEAD
        if proc is None or proc.poll() is not None:
            return
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (OSError, AttributeError):
            proc.kill()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            log.warning("kernel process %s did not exit after SIGKILL", proc.pid)

    def close(self) -> None:
        """Idempotent: kills the kernel process and marks the session dead."""
        self._kill()

    def __enter__(self) -> "KernelSession":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    # -- execution ---------------------------------------------------------

    def execute(self, code: str, timeout_ms: int | None = None) -> ExecutionResult:
        """Run one code block, preserving kernel state from earlier calls."""
        if self.state is not SessionState.LIVE or self._proc is None:
            raise SessionDead("execute on a dead session")
        budget = (timeout_ms if timeout_ms is not None else self.timeout_ms) / 1000.0
        self._next_id += 1
        rid = self._next_id
        start = time.monotonic()
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(
                json.dumps({"id": rid, "op": "exec", "code": code}) + "\n"
            )
            self._proc.stdin.flush()
        except (OSError, ValueError):
            return self._protocol_failure("kernel stdin closed", start)

        deadline = start + budget
        line = self._read_line(max(0.0, deadline - time.monotonic()))
        elapsed = time.monotonic() - start
        if line is None:
            log.warning("execution timed out after %.1fs; restarting kernel", budget)
            self._restart()
            return ExecutionResult(status=ExecStatus.TIMEOUT, elapsed=elapsed)
        if line is _EOF:
            return self._protocol_failure("kernel closed its output stream", start)
        frame = _try_json(line)  # type: ignore[arg-type]
        problem = _validate_response(frame, rid)
        if problem is not None:
            return self._protocol_failure(problem, start)
        assert frame is not None
        status = ExecStatus.OK if frame["status"] == "ok" else ExecStatus.EXCEPTION
        result = ExecutionResult(
            status=status,
            stdout=frame["stdout"],
            # ok results carry no error and failed ones no value, whatever
            # a sloppy kernel put in the frame
            value_repr=frame["value"] if status is ExecStatus.OK else None,
            error_repr=frame["error"] if status is ExecStatus.EXCEPTION else None,
            elapsed=elapsed,
        )
        return self._mark_truncation(result)

    def _protocol_failure(self, reason: str, start: float) -> ExecutionResult:
        elapsed = time.monotonic() - start
        log.warning("kernel protocol error: %s; restarting", reason)
        self._restart()
        return ExecutionResult(
            status=ExecStatus.PROTOCOL_ERROR, error_repr=reason, elapsed=elapsed
        )

    def _mark_truncation(self, result: ExecutionResult) -> ExecutionResult:
        if len(_render_body(result)) <= self.max_chars:
            return result
        return replace(result, truncated=True)

    def _read_line(self, timeout: float) -> object | None:
        """One line from the kernel, _EOF on stream end, None on timeout."""
        try:
            return self._lines.get(timeout=timeout)
        except queue.Empty:
            return None


def _pump_lines(stream: IO[str] | None, sink: queue.Queue) -> None:
    if stream is None:
        sink.put(_EOF)
        return
    try:
        for line in stream:
            sink.put(line)
    except (OSError, ValueError):
        pass
    sink.put(_EOF)


def _try_json(line: str) -> dict | None:
    try:
        frame = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError):
        return None
    return frame if isinstance(frame, dict) else None


def _validate_response(frame: dict | None, expected_id: int) -> str | None:
    """None when the frame is a well-formed response for ``expected_id``."""
    if frame is None:
        return "malformed frame (not a JSON object)"
    if frame.get("id") != expected_id:
        return f"response id {frame.get('id')!r} does not match request id {expected_id}"
    if frame.get("status") not in ("ok", "exception"):
        return f"unknown status {frame.get('status')!r}"
    if not isinstance(frame.get("stdout"), str):
        return "stdout field missing or not a string"
    if not (frame.get("value") is None or isinstance(frame["value"], str)):
        return "value field must be a string or null"
    if not (frame.get("error") is None or isinstance(frame["error"], str)):
        return "error field must be a string or null"
    return None


def start_session(
    kernel_command: Sequence[str],
    env: Mapping[str, str] | None = None,
    **kwargs,
) -> KernelSession:
    """Spawn a kernel and wait for its ready frame."""
    return KernelSession(kernel_command, env, **kwargs)


def close_session(session: KernelSession) -> None:
    session.close()
