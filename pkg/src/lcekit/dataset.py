"""Instruction-data construction: seed filtering, prompt templates,
consistency filtering, loss-span annotation, and sequence packing.

Training text is the serialized conversation. Loss spans are half-open byte
ranges over its UTF-8 encoding and cover assistant text and code blocks,
each including its opening token and end-of-block token, plus the closing
end-of-message of the assistant message; execution blocks, the assistant
role token, and all non-assistant bytes stay unmasked. Packing is greedy
first-fit in input order with no instance ever split across sequences;
attention visibility is same-instance-only and recorded on every pack.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Protocol, Sequence

from .answers import AnswerValue, EqConfig, answers_equivalent, extract_final_answer
from .format import (
    DEFAULT_TOKENS,
    BlockKind,
    Conversation,
    Role,
    SpecialTokenSet,
    serialize,
)

log = logging.getLogger(__name__)

DEFAULT_CONTEXT_LENGTH = 2048
DEFAULT_SAMPLES = 3


class ProblemSource(Enum):
    GSM8K = "gsm8k"
    MATH = "math"
    INTERPOLATED = "interpolated"
    OTHER = "other"


@dataclass(frozen=True)
class ProblemRecord:
    id: str
    source: ProblemSource
    question: str
    ground_truth: AnswerValue | None = None
    level: int | None = None
    subject: str | None = None

    def __post_init__(self) -> None:
        if self.source in (ProblemSource.GSM8K, ProblemSource.MATH):
            if self.ground_truth is None:
                raise ValueError(f"{self.source.value} record {self.id} needs a ground truth")


@dataclass(frozen=True)
class CandidateSolution:
    conversation: Conversation
    extracted: AnswerValue | None

    @classmethod
    def from_conversation(cls, conversation: Conversation) -> "CandidateSolution":
        return cls(conversation, extract_final_answer(conversation))


def filter_seed(
    record: ProblemRecord, solution: CandidateSolution, eq_cfg: EqConfig = EqConfig()
) -> bool:
    """Keep a seed solution only when its answer matches the ground truth."""
    if record.ground_truth is None:
        raise ValueError("seed filtering needs a ground truth")
    if solution.extracted is None:
        return False
    return answers_equivalent(solution.extracted, record.ground_truth, eq_cfg)


# The wording of both prompt templates is deliberately frozen, double spaces
# included; downstream fixtures compare the full byte sequence.
_INTERPOLATION_HEAD = (
    'Please create a new problem, following the given example, "Example 1" is '
    'an easy problem and "Example 2" is much more difficulty than  "Example 1", '
    'the new problem should be harder than "Example 1" and simpler than '
    '"Example 2".'
)

_DIFFICULTY_HEAD = "Which problem  is more difficult?"
_DIFFICULTY_TAIL = 'You answer should be one of "Problem 1", "Problem 2" and "Tie".'


def build_interpolation_prompt(easy: ProblemRecord, hard: ProblemRecord) -> str:
    """Prompt asking for a new problem between an easy and a hard one."""
    if easy.source is not ProblemSource.GSM8K or hard.source is not ProblemSource.MATH:
        raise ValueError("interpolation pairs an easy gsm8k problem with a hard math one")
    return (
        _INTERPOLATION_HEAD
        + "\n\nExample 1: "
        + easy.question
        + "\n\nExample 2:  "
        + hard.question
    )


def build_difficulty_prompt(problem_1: str, problem_2: str) -> str:
    """Prompt asking a judge model which of two problems is harder."""
    return (
        _DIFFICULTY_HEAD
        + '\n\nProblem 1: "'
        + problem_1
        + '"\n\nProblem 2: "'
        + problem_2
        + '"\n\n'
        + _DIFFICULTY_TAIL
    )


class Verdict(Enum):
    PROBLEM_1 = "Problem 1"
    PROBLEM_2 = "Problem 2"
    TIE = "Tie"


class UnparseableVerdict(Exception):
    pass


def parse_difficulty_verdict(response: str) -> Verdict:
    """The verdict phrase nearest the end of a judge response.

    Judges restate both labels while reasoning; the conclusion comes last,
    so the final occurrence wins. Substring search makes bold markers and
    surrounding punctuation irrelevant.
    """
    best: Verdict | None = None
    best_at = -1
    for verdict in Verdict:
        at = response.rfind(verdict.value)
        if at > best_at:
            best, best_at = verdict, at
    if best is None or best_at < 0:
        raise UnparseableVerdict("response names neither problem nor a tie")
    return best


def consistency_filter(
    candidates: Sequence[CandidateSolution],
    n: int = DEFAULT_SAMPLES,
    eq_cfg: EqConfig = EqConfig(),
) -> tuple[CandidateSolution, AnswerValue] | None:
    """Self-consistency gate over ``n`` sampled solutions.

    Keeps the first candidate (with the consensus answer) only when every
    sample extracted an answer and all pairs agree. Pairwise agreement is
    required because tolerance-based equivalence is not transitive.
    """
    if len(candidates) != n:
        raise ValueError(f"expected exactly {n} candidates, got {len(candidates)}")
    answers = [c.extracted for c in candidates]
    if any(a is None for a in answers):
        return None
    for i in range(len(answers)):
        for j in range(i + 1, len(answers)):
            if not answers_equivalent(answers[i], answers[j], eq_cfg):
                return None
    return candidates[0], answers[0]


def assign_consensus(record: ProblemRecord, answer: AnswerValue) -> ProblemRecord:
    """A copy of a generated problem with the consensus answer adopted as its
    reference answer, so it can flow into seed-style filtering later."""
    return replace(record, ground_truth=answer)


# ---------------------------------------------------------------------------
# Loss spans and packing


@dataclass(frozen=True)
class TrainingInstance:
    """Serialized conversation plus the byte ranges the loss applies to."""

    text: str
    loss_spans: tuple[tuple[int, int], ...]

    def to_json_dict(self) -> dict:
        return {"text": self.text, "loss_spans": [list(s) for s in self.loss_spans]}

    @classmethod
    def from_json_dict(cls, raw: dict) -> "TrainingInstance":
        return cls(raw["text"], tuple((s, e) for s, e in raw["loss_spans"]))


def make_training_instance(
    conv: Conversation, tokens: SpecialTokenSet = DEFAULT_TOKENS
) -> TrainingInstance:
    """Serialize a conversation and mark which bytes carry training loss.

    The model should learn to emit reasoning text, code, their delimiters,
    and the end of its own message; it should never learn to emit execution
    results (those are injected at inference) or the fixed system and user
    scaffolding.
    """
    text = serialize(conv, tokens)
    blen = lambda s: len(s.encode("utf-8"))
    eob_len = blen(tokens.end_of_block)
    eom_len = blen(tokens.end_of_message)
    spans: list[tuple[int, int]] = []
    cursor = 0
    for msg in conv.messages:
        cursor += blen(tokens.role_tokens[msg.role])
        last_learnable = False
        for block in msg.blocks:
            start = cursor
            cursor += blen(tokens.block_tokens[block.kind]) + blen(block.content) + eob_len
            learnable = msg.role is Role.ASSISTANT and block.kind in (
                BlockKind.TEXT,
                BlockKind.CODE,
            )
            if learnable:
                spans.append((start, cursor))
            last_learnable = learnable
        if msg.role is Role.ASSISTANT and last_learnable:
            spans[-1] = (spans[-1][0], cursor + eom_len)
        cursor += eom_len
    assert cursor == blen(text)
    return TrainingInstance(text, tuple(spans))


@dataclass(frozen=True)
class TokenSpan:
    token_id: int
    byte_start: int
    byte_end: int


class TokenizerPort(Protocol):
    """Tokenizer contract: offsets must partition the UTF-8 encoding."""

    def encode(self, text: str) -> list[TokenSpan]: ...


class ByteTokenizer:
    """One token per byte; the stub tokenizer for tests and offline packing."""

    def encode(self, text: str) -> list[TokenSpan]:
        data = text.encode("utf-8")
        return [TokenSpan(b, i, i + 1) for i, b in enumerate(data)]


@dataclass
class PackedSequence:
    token_ids: list[int]
    boundaries: list[tuple[int, int]]  # half-open token-index ranges per instance
    loss_mask: list[int]
    visibility: str = "same-instance-only"

    def to_json_dict(self) -> dict:
        return {
            "input_ids": self.token_ids,
            "loss_mask": self.loss_mask,
            "boundaries": [list(b) for b in self.boundaries],
        }


def _token_loss_mask(
    token_spans: Sequence[TokenSpan], loss_spans: Sequence[tuple[int, int]]
) -> list[int]:
    # Both lists are sorted, so a single sweep suffices.
    mask = [0] * len(token_spans)
    spans = iter(loss_spans)
    current = next(spans, None)
    for i, tok in enumerate(token_spans):
        while current is not None and current[1] <= tok.byte_start:
            current = next(spans, None)
        if current is None:
            break
        if tok.byte_end > current[0] and tok.byte_start < current[1]:
            mask[i] = 1
    return mask


def pack(
    instances: Sequence[TrainingInstance],
    tokenizer: TokenizerPort,
    context_length: int = DEFAULT_CONTEXT_LENGTH,
) -> list[PackedSequence]:
    """Greedy first-fit packing of whole instances into fixed contexts.

    Instances longer than the context are dropped with a warning. Input
    order is preserved within each pack and no shuffling happens here;
    ordering across epochs belongs to the trainer.
    """
    packs: list[PackedSequence] = []
    room: list[int] = []
    for idx, inst in enumerate(instances):
        token_spans = tokenizer.encode(inst.text)
        if len(token_spans) > context_length:
            log.warning(
                "instance %d is %d tokens, over the %d context; dropped",
                idx,
                len(token_spans),
                context_length,
            )
            continue
        mask = _token_loss_mask(token_spans, inst.loss_spans)
        ids = [t.token_id for t in token_spans]
        target = next(
            (k for k, free in enumerate(room) if free >= len(ids)), None
        )
        if target is None:
            packs.append(PackedSequence([], [], []))
            room.append(context_length)
            target = len(packs) - 1
        seq = packs[target]
        start = len(seq.token_ids)
        seq.token_ids.extend(ids)
        seq.loss_mask.extend(mask)
        seq.boundaries.append((start, start + len(ids)))
        room[target] -= len(ids)
    return packs


# ---------------------------------------------------------------------------
# Line-delimited JSON helpers shared by the pipeline commands


def read_jsonl(path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                yield line_no, json.loads(line)


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
