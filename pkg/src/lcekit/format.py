"""Special-token conversation format: data model, parser, serializer, stream scanner.

A serialized conversation is a flat string of messages. Each message is a role
token, zero or more blocks, and an end-of-message token. Each block is an
opening kind token, raw content, and an end-of-block token. Block content
never contains a complete special token, and no token is a prefix of another,
so scanning is unambiguous at every position.

Parse failures raise :class:`ParseError` with one of these kinds:

- ``UNKNOWN_TOKEN``: raw text where only a special token is allowed.
- ``UNEXPECTED_TOKEN``: a well-formed special token that is illegal in the
  current state (nested block opener, stray end-of-block, role token inside
  a message).
- ``UNTERMINATED_BLOCK`` / ``UNTERMINATED_MESSAGE``: input ended inside a
  block or message.
- ``EXECUTION_WITHOUT_CODE``: an execution block that does not immediately
  follow a code block.
- ``INVALID_STRUCTURE``: message-level violations (system message not first,
  code or execution blocks outside an assistant message).

The batch parser and the incremental :class:`StreamScanner` are independent
implementations of the same grammar; on any input, any chunking of the
scanner yields the same block structure and the same error kind and position
as the batch parser.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Mapping, Sequence


class BlockKind(Enum):
    TEXT = "text"
    CODE = "code"
    EXECUTION = "execution"


class Role(Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class LceFormatError(Exception):
    """Base class for all format-layer errors."""


class ContentContainsToken(LceFormatError):
    """Block content embeds a special token, so serialization would not invert."""


class InvalidConversationError(LceFormatError):
    """A message or conversation violates a structural invariant."""


class ParseErrorKind(Enum):
    UNKNOWN_TOKEN = "unknown_token"
    UNEXPECTED_TOKEN = "unexpected_token"
    UNTERMINATED_BLOCK = "unterminated_block"
    UNTERMINATED_MESSAGE = "unterminated_message"
    EXECUTION_WITHOUT_CODE = "execution_without_code"
    INVALID_STRUCTURE = "invalid_structure"


class ParseError(LceFormatError):
    def __init__(self, kind: ParseErrorKind, position: int, message: str):
        super().__init__(f"{kind.value} at {position}: {message}")
        self.kind = kind
        self.position = position


@dataclass(frozen=True)
class SpecialTokenSet:
    """The sentinel strings that delimit roles, blocks, and messages.

    All tokens must be non-empty, pairwise distinct, and prefix-free, which
    guarantees that at most one token can match at any scan position.
    """

    role_tokens: Mapping[Role, str]
    block_tokens: Mapping[BlockKind, str]
    end_of_block: str
    end_of_message: str

    def __post_init__(self) -> None:
        missing_roles = set(Role) - set(self.role_tokens)
        missing_kinds = set(BlockKind) - set(self.block_tokens)
        if missing_roles or missing_kinds:
            raise InvalidConversationError(
                f"token set incomplete: missing {missing_roles or missing_kinds}"
            )
        toks = self.all_tokens
        if any(not t for t in toks):
            raise InvalidConversationError("special tokens must be non-empty")
        if len(set(toks)) != len(toks):
            raise InvalidConversationError("special tokens must be pairwise distinct")
        for a in toks:
            for b in toks:
                if a != b and b.startswith(a):
                    raise InvalidConversationError(
                        f"token {a!r} is a prefix of {b!r}; scanning would be ambiguous"
                    )

    @property
    def all_tokens(self) -> tuple[str, ...]:
        return (
            *(self.role_tokens[r] for r in Role),
            *(self.block_tokens[k] for k in BlockKind),
            self.end_of_block,
            self.end_of_message,
        )

    @classmethod
    def from_dict(cls, raw: Mapping[str, str]) -> "SpecialTokenSet":
        """Build a token set from flat config keys, falling back to defaults."""
        base = DEFAULT_TOKENS
        return cls(
            role_tokens={r: raw.get(r.value, base.role_tokens[r]) for r in Role},
            block_tokens={k: raw.get(k.value, base.block_tokens[k]) for k in BlockKind},
            end_of_block=raw.get("end_of_block", base.end_of_block),
            end_of_message=raw.get("end_of_message", base.end_of_message),
        )


DEFAULT_TOKENS = SpecialTokenSet(
    role_tokens={
        Role.SYSTEM: "<|system|>",
        Role.USER: "<|user|>",
        Role.ASSISTANT: "<|assistant|>",
    },
    block_tokens={
        BlockKind.TEXT: "<|text|>",
        BlockKind.CODE: "<|code|>",
        BlockKind.EXECUTION: "<|execution|>",
    },
    end_of_block="<|endofblock|>",
    end_of_message="<|endofmessage|>",
)


@dataclass(frozen=True)
class LceBlock:
    """One block of a message; ``content`` excludes all delimiters."""

    kind: BlockKind
    content: str


@dataclass(frozen=True)
class Message:
    role: Role
    blocks: tuple[LceBlock, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.blocks, tuple):
            object.__setattr__(self, "blocks", tuple(self.blocks))
        prev: LceBlock | None = None
        for b in self.blocks:
            if b.kind is not BlockKind.TEXT and self.role is not Role.ASSISTANT:
                raise InvalidConversationError(
                    f"{b.kind.value} block in a {self.role.value} message"
                )
            if b.kind is BlockKind.EXECUTION and (
                prev is None or prev.kind is not BlockKind.CODE
            ):
                raise InvalidConversationError(
                    "execution block must immediately follow a code block"
                )
            prev = b


@dataclass(frozen=True)
class Conversation:
    messages: tuple[Message, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.messages, tuple):
            object.__setattr__(self, "messages", tuple(self.messages))
        for i, m in enumerate(self.messages):
            if m.role is Role.SYSTEM and i != 0:
                raise InvalidConversationError(
                    "system message allowed only as the first message"
                )


# ---------------------------------------------------------------------------
# Serialization


def serialize(conv: Conversation, tokens: SpecialTokenSet = DEFAULT_TOKENS) -> str:
    """Render a conversation to its canonical byte form (no inter-message gaps).

    Raises ContentContainsToken if any block content embeds a special token,
    since such content could not survive a round trip.
    """
    parts: list[str] = []
    for msg in conv.messages:
        parts.append(tokens.role_tokens[msg.role])
        for block in msg.blocks:
            for tok in tokens.all_tokens:
                if tok in block.content:
                    raise ContentContainsToken(
                        f"block content embeds special token {tok!r}"
                    )
            parts.append(tokens.block_tokens[block.kind])
            parts.append(block.content)
            parts.append(tokens.end_of_block)
        parts.append(tokens.end_of_message)
    return "".join(parts)


# ---------------------------------------------------------------------------
# Batch parsing


class _TokenTable:
    """Lookup helpers shared by the parser and scanner."""

    def __init__(self, tokens: SpecialTokenSet):
        self.tokens = tokens
        self.role_of = {tok: role for role, tok in tokens.role_tokens.items()}
        self.kind_of = {tok: kind for kind, tok in tokens.block_tokens.items()}
        self.all = tokens.all_tokens
        self.max_len = max(len(t) for t in self.all)
        self.pattern = re.compile("|".join(re.escape(t) for t in self.all))

    def token_at(self, s: str, pos: int) -> str | None:
        """The unique token starting at ``pos``, if any."""
        for tok in self.all:
            if s.startswith(tok, pos):
                return tok
        return None

    def is_partial_tail(self, s: str, pos: int) -> bool:
        """True when s[pos:] is a proper prefix of some token."""
        tail = s[pos:]
        return bool(tail) and any(
            len(tail) < len(tok) and tok.startswith(tail) for tok in self.all
        )


def _check_block_open(
    kind: BlockKind, role: Role, prev_kind: BlockKind | None, pos: int
) -> None:
    if kind is BlockKind.EXECUTION and prev_kind is not BlockKind.CODE:
        raise ParseError(
            ParseErrorKind.EXECUTION_WITHOUT_CODE,
            pos,
            "execution block must immediately follow a code block",
        )
    if kind is not BlockKind.TEXT and role is not Role.ASSISTANT:
        raise ParseError(
            ParseErrorKind.INVALID_STRUCTURE,
            pos,
            f"{kind.value} block in a {role.value} message",
        )


def parse(
    raw: str, tokens: SpecialTokenSet = DEFAULT_TOKENS, *, lenient: bool = True
) -> Conversation:
    """Parse a complete serialized conversation.

    Lenient mode (the default) skips whitespace between messages; strict mode
    rejects it. Everything else is identical. ``parse(serialize(c)) == c``
    for every valid conversation, and ``serialize(parse(r)) == r`` for every
    canonically serialized string.
    """
    table = _TokenTable(tokens)
    eob, eom = tokens.end_of_block, tokens.end_of_message
    pos = 0
    n = len(raw)
    messages: list[Message] = []

    while True:
        # Message boundary: expect a role token or end of input.
        if lenient:
            while pos < n and raw[pos].isspace():
                pos += 1
        if pos >= n:
            break
        tok = table.token_at(raw, pos)
        if tok is None:
            raise ParseError(
                ParseErrorKind.UNKNOWN_TOKEN, pos, "expected a role token"
            )
        role = table.role_of.get(tok)
        if role is None:
            raise ParseError(
                ParseErrorKind.UNEXPECTED_TOKEN,
                pos,
                f"{tok!r} is not valid at a message boundary",
            )
        if role is Role.SYSTEM and messages:
            raise ParseError(
                ParseErrorKind.INVALID_STRUCTURE,
                pos,
                "system message allowed only as the first message",
            )
        pos += len(tok)

        blocks: list[LceBlock] = []
        prev_kind: BlockKind | None = None
        while True:
            # Inside a message: expect a block opener or end-of-message.
            if pos >= n or table.is_partial_tail(raw, pos):
                raise ParseError(
                    ParseErrorKind.UNTERMINATED_MESSAGE, n, "message never closed"
                )
            tok = table.token_at(raw, pos)
            if tok is None:
                raise ParseError(
                    ParseErrorKind.UNKNOWN_TOKEN, pos, "text outside any block"
                )
            if tok == eom:
                pos += len(tok)
                messages.append(Message(role, tuple(blocks)))
                break
            kind = table.kind_of.get(tok)
            if kind is None:
                raise ParseError(
                    ParseErrorKind.UNEXPECTED_TOKEN,
                    pos,
                    f"{tok!r} is not valid inside a message",
                )
            _check_block_open(kind, role, prev_kind, pos)
            pos += len(tok)

            # Inside a block: content runs to the next token, which must close it.
            m = table.pattern.search(raw, pos)
            if m is None:
                raise ParseError(
                    ParseErrorKind.UNTERMINATED_BLOCK, n, "block never closed"
                )
            if m.group() != eob:
                raise ParseError(
                    ParseErrorKind.UNEXPECTED_TOKEN,
                    m.start(),
                    f"{m.group()!r} inside an open block",
                )
            blocks.append(LceBlock(kind, raw[pos : m.start()]))
            prev_kind = kind
            pos = m.end()

    return Conversation(tuple(messages))


# ---------------------------------------------------------------------------
# Incremental scanning


@dataclass(frozen=True)
class MessageOpened:
    role: Role


@dataclass(frozen=True)
class BlockOpened:
    kind: BlockKind


@dataclass(frozen=True)
class ContentChunk:
    text: str


@dataclass(frozen=True)
class BlockClosed:
    pass


@dataclass(frozen=True)
class MessageClosed:
    pass


@dataclass(frozen=True)
class ScanFailed:
    error: ParseError


ScanEvent = (
    MessageOpened | BlockOpened | ContentChunk | BlockClosed | MessageClosed | ScanFailed
)


def coalesce_events(events: Sequence[ScanEvent]) -> list[ScanEvent]:
    """Merge adjacent content chunks and drop empty ones.

    Two event streams describe the same scan iff their coalesced forms are
    equal; chunk granularity is an artifact of how the input was fed.
    """
    out: list[ScanEvent] = []
    for ev in events:
        if isinstance(ev, ContentChunk):
            if not ev.text:
                continue
            if out and isinstance(out[-1], ContentChunk):
                out[-1] = ContentChunk(out[-1].text + ev.text)
                continue
        out.append(ev)
    return out


def conversation_events(conv: Conversation) -> list[ScanEvent]:
    """The canonical event stream a full scan of ``conv`` must produce."""
    events: list[ScanEvent] = []
    for msg in conv.messages:
        events.append(MessageOpened(msg.role))
        for block in msg.blocks:
            events.append(BlockOpened(block.kind))
            if block.content:
                events.append(ContentChunk(block.content))
            events.append(BlockClosed())
        events.append(MessageClosed())
    return events


class _ScanState(Enum):
    BOUNDARY = "boundary"
    IN_MESSAGE = "in_message"
    IN_BLOCK = "in_block"
    DONE = "done"
    FAILED = "failed"


class StreamScanner:
    """Push-based scanner that tolerates special tokens split across chunks.

    Feed text in arbitrary pieces; events come back as soon as they are
    decidable. Call :meth:`finish` at end of input to flush termination
    errors. In ``message_body`` mode the scanner starts inside an implicit
    assistant message, which is the shape of streamed model output; a single
    end-of-message token then ends the scan.
    """

    def __init__(
        self,
        tokens: SpecialTokenSet = DEFAULT_TOKENS,
        *,
        lenient: bool = True,
        message_body: bool = False,
    ):
        self._table = _TokenTable(tokens)
        self._lenient = lenient
        self._message_body = message_body
        self._buf = ""
        self._pos = 0  # absolute offset of _buf[0] in the full input
        self._opened_messages = 0
        self._prev_kind: BlockKind | None = None
        self._role: Role | None = Role.ASSISTANT if message_body else None
        self._state = _ScanState.IN_MESSAGE if message_body else _ScanState.BOUNDARY

    @property
    def pending(self) -> int:
        """Characters buffered while a token boundary is still undecidable."""
        return len(self._buf)

    @property
    def failed(self) -> bool:
        return self._state is _ScanState.FAILED

    def feed(self, chunk: str) -> list[ScanEvent]:
        self._buf += chunk
        return list(self._drain(eof=False))

    def finish(self) -> list[ScanEvent]:
        return list(self._drain(eof=True))

    # The drain loop mirrors the batch parser state for state; any divergence
    # between the two is a bug, and the test suite diffs them exhaustively.
    def _drain(self, eof: bool) -> Iterator[ScanEvent]:
        if self._state in (_ScanState.FAILED,):
            return
        eob = self._table.tokens.end_of_block
        eom = self._table.tokens.end_of_message
        while True:
            buf = self._buf
            if self._state in (_ScanState.BOUNDARY, _ScanState.DONE):
                if self._lenient:
                    stripped = buf.lstrip()
                    self._consume(len(buf) - len(stripped))
                    buf = stripped
                if not buf:
                    return
                tok = self._table.token_at(buf, 0)
                if tok is None:
                    if not eof and self._could_extend(buf):
                        return
                    yield self._fail(
                        ParseErrorKind.UNKNOWN_TOKEN, self._pos, "expected a role token"
                    )
                    return
                role = self._table.role_of.get(tok)
                if role is None or self._state is _ScanState.DONE:
                    yield self._fail(
                        ParseErrorKind.UNEXPECTED_TOKEN,
                        self._pos,
                        f"{tok!r} is not valid at a message boundary",
                    )
                    return
                if role is Role.SYSTEM and self._opened_messages:
                    yield self._fail(
                        ParseErrorKind.INVALID_STRUCTURE,
                        self._pos,
                        "system message allowed only as the first message",
                    )
                    return
                self._consume(len(tok))
                self._opened_messages += 1
                self._role = role
                self._prev_kind = None
                self._state = _ScanState.IN_MESSAGE
                yield MessageOpened(role)

            elif self._state is _ScanState.IN_MESSAGE:
                if not buf:
                    if eof:
                        yield self._fail(
                            ParseErrorKind.UNTERMINATED_MESSAGE,
                            self._pos,
                            "message never closed",
                        )
                    return
                tok = self._table.token_at(buf, 0)
                if tok is None:
                    if self._could_extend(buf):
                        if not eof:
                            return
                        yield self._fail(
                            ParseErrorKind.UNTERMINATED_MESSAGE,
                            self._pos + len(buf),
                            "message never closed",
                        )
                        return
                    yield self._fail(
                        ParseErrorKind.UNKNOWN_TOKEN, self._pos, "text outside any block"
                    )
                    return
                if tok == eom:
                    self._consume(len(tok))
                    self._state = (
                        _ScanState.DONE if self._message_body else _ScanState.BOUNDARY
                    )
                    yield MessageClosed()
                    continue
                kind = self._table.kind_of.get(tok)
                if kind is None:
                    yield self._fail(
                        ParseErrorKind.UNEXPECTED_TOKEN,
                        self._pos,
                        f"{tok!r} is not valid inside a message",
                    )
                    return
                try:
                    _check_block_open(kind, self._role, self._prev_kind, self._pos)
                except ParseError as err:
                    yield self._fail_with(err)
                    return
                self._consume(len(tok))
                self._prev_kind = kind
                self._state = _ScanState.IN_BLOCK
                yield BlockOpened(kind)

            elif self._state is _ScanState.IN_BLOCK:
                m = self._table.pattern.search(buf)
                if m is None:
                    # Emit content that can no longer be part of a token; hold
                    # the longest suffix that might still complete one.
                    hold = self._partial_suffix_len(buf)
                    emit = buf[: len(buf) - hold]
                    if emit:
                        self._consume(len(emit))
                        yield ContentChunk(emit)
                    if eof:
                        yield self._fail(
                            ParseErrorKind.UNTERMINATED_BLOCK,
                            self._pos + hold,
                            "block never closed",
                        )
                    return
                if m.start():
                    content = buf[: m.start()]
                    self._consume(len(content))
                    yield ContentChunk(content)
                if m.group() != eob:
                    yield self._fail(
                        ParseErrorKind.UNEXPECTED_TOKEN,
                        self._pos,
                        f"{m.group()!r} inside an open block",
                    )
                    return
                self._consume(len(m.group()))
                self._state = _ScanState.IN_MESSAGE
                yield BlockClosed()

            else:
                return

    def _consume(self, count: int) -> None:
        if count:
            self._buf = self._buf[count:]
            self._pos += count

    def _could_extend(self, buf: str) -> bool:
        return self._table.is_partial_tail(buf, 0)

    def _partial_suffix_len(self, buf: str) -> int:
        top = min(len(buf), self._table.max_len - 1)
        for h in range(top, 0, -1):
            tail = buf[-h:]
            if any(tok.startswith(tail) for tok in self._table.all):
                return h
        return 0

    def _fail(self, kind: ParseErrorKind, position: int, message: str) -> ScanFailed:
        return self._fail_with(ParseError(kind, position, message))

    def _fail_with(self, err: ParseError) -> ScanFailed:
        self._state = _ScanState.FAILED
        return ScanFailed(err)
