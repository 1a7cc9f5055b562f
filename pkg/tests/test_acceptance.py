"""Acceptance suite: one test per criterion, each printing a PASS line and
enforcing its runtime budget.

Criteria 1 through 8 run against mocks only. Criteria 9 and 10 need the
built Node kernel under kernel/dist and skip when it is absent.
"""

import itertools
import json
import random
import shutil
import subprocess
import sys
import time
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

import pytest

from lcekit.answers import (
    DecimalAnswer,
    EqConfig,
    RationalAnswer,
    answers_equivalent,
)
from lcekit.dataset import (
    ByteTokenizer,
    CandidateSolution,
    TrainingInstance,
    Verdict,
    build_difficulty_prompt,
    build_interpolation_prompt,
    consistency_filter,
    make_training_instance,
    pack,
    parse_difficulty_verdict,
)
from lcekit.executor import (
    ExecStatus,
    ExecutionResult,
    SessionState,
    close_session,
    start_session,
)
from lcekit.format import (
    BlockKind,
    Conversation,
    LceBlock,
    Message,
    ParseError,
    Role,
    StreamScanner,
    coalesce_events,
    conversation_events,
    parse,
    serialize,
)
from lcekit.orchestrator import GenerationConfig, Termination, solve

import conftest
import test_dataset
from conftest import ROAD_TRIP_QUESTION, fixture_text
from helpers import LoopingModel, MockCompletionServer, MockExecutor, ScriptedModel, random_conversation

REPO_ROOT = Path(__file__).resolve().parents[1]
KERNEL_JS = REPO_ROOT / "kernel" / "dist" / "kernel.js"

requires_kernel = pytest.mark.skipif(
    not (KERNEL_JS.exists() and shutil.which("node")),
    reason="node kernel not built (run npm install && npm run build in kernel/)",
)


class budget:
    """Assert the body finished inside the criterion's runtime budget."""

    def __init__(self, name: str, seconds: float):
        self.name = name
        self.seconds = seconds

    def __enter__(self):
        self.started = time.monotonic()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.monotonic() - self.started
        if exc_type is None:
            assert elapsed < self.seconds, (
                f"{self.name} took {elapsed:.2f}s, budget {self.seconds}s"
            )
            print(f"PASS {self.name} ({elapsed:.2f}s)")
        else:
            print(f"FAIL {self.name}")
        return False


def test_criterion_1_format_round_trip():
    with budget("criterion 1: format round trip", 5.0):
        rng = random.Random(1001)
        for _ in range(1000):
            conv = random_conversation(rng)
            assert parse(serialize(conv)) == conv
        pieces = [
            "<|text|>", "<|code|>", "<|execution|>", "<|endofblock|>",
            "<|endofmessage|>", "<|user|>", "<|assistant|>", "<|system|>",
            "<|", "|>", "abc", " ", "<", "x", "\n",
        ]
        for _ in range(1000):
            raw = "".join(rng.choice(pieces) for _ in range(rng.randrange(10)))
            try:
                parse(raw)  # must either parse or raise the documented error
            except ParseError:
                pass


def test_criterion_2_streaming_equivalence(road_trip_fixture, six_block_fixtures):
    with budget("criterion 2: streaming equivalence", 10.0):
        rng = random.Random(1002)
        fixtures = [road_trip_fixture, *six_block_fixtures]
        for raw in fixtures:
            expected = conversation_events(parse(raw))
            for cut in range(len(raw) + 1):
                assert _scan(raw[:cut], raw[cut:]) == expected
        for _ in range(200):
            raw = rng.choice(fixtures)
            chunks, at = [], 0
            while at < len(raw):
                size = rng.randrange(1, 20)
                chunks.append(raw[at : at + size])
                at += size
            assert _scan(*chunks) == conversation_events(parse(raw))


def _scan(*chunks):
    scanner = StreamScanner()
    events = []
    for chunk in chunks:
        events.extend(scanner.feed(chunk))
    events.extend(scanner.finish())
    return coalesce_events(events)


def test_criterion_3_loop_trace_fidelity(road_trip_fixture):
    with budget("criterion 3: loop trace fidelity", 1.0):
        blocks = parse(road_trip_fixture).messages[2].blocks
        model = ScriptedModel(
            [
                "<|text|>" + blocks[0].content + "<|endofblock|>",
                "<|code|>" + blocks[1].content + "<|endofblock|>",
                "<|text|>" + blocks[3].content + "<|endofblock|>",
                "<|endofmessage|>",
            ]
        )
        executor = MockExecutor(
            [ExecutionResult(status=ExecStatus.OK, stdout="", value_repr="340")]
        )
        trace = solve(ROAD_TRIP_QUESTION, model, executor)
        assert trace.termination is Termination.END_OF_MESSAGE
        assert serialize(trace.conversation) == road_trip_fixture

        adversary = LoopingModel("<|code|>1+1<|endofblock|>")
        hungry = MockExecutor()
        trace = solve("q", adversary, hungry, GenerationConfig(max_blocks=32))
        assert trace.termination is Termination.BLOCK_LIMIT
        assert sum(len(m.blocks) for m in trace.conversation.messages[2:]) == 32
        assert len(hungry.codes) == 16


def test_criterion_4_loss_span_exactness():
    with budget("criterion 4: loss span exactness", 5.0):
        rng = random.Random(1004)
        execution_token = "<|execution|>".encode()
        end_of_block = "<|endofblock|>".encode()
        for _ in range(200):
            conv = random_conversation(rng)
            instance = make_training_instance(conv)
            assert list(instance.loss_spans) == test_dataset.rescan_loss_spans(
                instance.text
            )
            # no byte of any execution block, delimiters included, is flagged
            data = instance.text.encode("utf-8")
            at = 0
            while (at := data.find(execution_token, at)) != -1:
                block_end = data.index(end_of_block, at) + len(end_of_block)
                for s, e in instance.loss_spans:
                    assert e <= at or s >= block_end
                at = block_end


def test_criterion_5_packing():
    with budget("criterion 5: packing", 5.0):
        rng = random.Random(1005)
        tokenizer = ByteTokenizer()
        for _ in range(40):
            instances = []
            for n in range(rng.randrange(1, 14)):
                size = rng.randrange(1, 2500)
                spans = []
                at = 0
                while at < size and rng.random() < 0.6:
                    start = rng.randrange(at, size)
                    end = rng.randrange(start + 1, size + 1)
                    spans.append((start, end))
                    at = end
                instances.append(
                    TrainingInstance(chr(ord("a") + n % 26) * size, tuple(spans))
                )
            packs = pack(instances, tokenizer, 2048)
            surviving = [i for i in instances if len(i.text.encode()) <= 2048]
            packed = []
            for p in packs:
                assert len(p.token_ids) <= 2048
                assert p.visibility == "same-instance-only"
                for s, e in p.boundaries:
                    packed.append(tuple(p.token_ids[s:e]))
                # brute-force mask recomputation per instance
                for (s, e), inst in zip(
                    p.boundaries, _match_instances(p, surviving, tokenizer)
                ):
                    for offset in range(e - s):
                        want = int(
                            any(
                                offset < span_end and offset + 1 > span_start
                                for span_start, span_end in inst.loss_spans
                            )
                        )
                        assert p.loss_mask[s + offset] == want
            assert sorted(packed) == sorted(
                tuple(t.token_id for t in tokenizer.encode(i.text)) for i in surviving
            )


def _match_instances(p, surviving, tokenizer):
    by_ids = {}
    for inst in surviving:
        by_ids.setdefault(
            tuple(t.token_id for t in tokenizer.encode(inst.text)), []
        ).append(inst)
    out = []
    for s, e in p.boundaries:
        out.append(by_ids[tuple(p.token_ids[s:e])][0])
    return out


def test_criterion_6_consistency_filter():
    with budget("criterion 6: consistency filter", 1.0):
        def candidate(text):
            conv = Conversation(
                (Message(Role.ASSISTANT, (LceBlock(BlockKind.TEXT, text),)),)
            )
            return CandidateSolution.from_conversation(conv)

        kept = 0
        for combo in itertools.product(("got 11", "got 22"), repeat=3):
            if consistency_filter([candidate(c) for c in combo], 3) is not None:
                kept += 1
        assert kept == 2
        for failing_at in range(3):
            sols = [candidate("got 11") for _ in range(3)]
            sols[failing_at] = candidate("no digits at all")
            assert consistency_filter(sols, 3) is None


def test_criterion_7_answer_equivalence_oracle():
    with budget("criterion 7: answer equivalence oracle", 5.0):
        rng = random.Random(1007)
        cfg = EqConfig()
        rel = Fraction(str(cfg.rel_tol))
        abs_ = Fraction(str(cfg.abs_tol))
        checked = 0
        for _ in range(600):
            num = rng.randrange(-99999, 100000)
            den = rng.randrange(1, 100000)
            approx = Decimal(f"{Decimal(num) / Decimal(den):.7g}")
            expected = abs(Fraction(num, den) - Fraction(approx)) <= max(
                abs_, rel * max(abs(Fraction(num, den)), abs(Fraction(approx)))
            )
            got = answers_equivalent(RationalAnswer(num, den), DecimalAnswer(approx), cfg)
            assert got == expected
            checked += 1
        assert checked >= 500
        values = [
            RationalAnswer(rng.randrange(-999, 999), rng.randrange(1, 999))
            for _ in range(100)
        ] + [DecimalAnswer(Decimal(rng.randrange(-10**6, 10**6)) / 100) for _ in range(100)]
        for v in values:
            assert answers_equivalent(v, v, cfg)
        for _ in range(300):
            a, b = rng.choice(values), rng.choice(values)
            assert answers_equivalent(a, b, cfg) == answers_equivalent(b, a, cfg)


def test_criterion_8_prompt_templates():
    with budget("criterion 8: prompt templates", 1.0):
        easy = test_dataset.gsm8k_record(conftest.HIKING_QUESTION)
        hard = test_dataset.math_record(conftest.QUADRATIC_QUESTION)
        assert build_interpolation_prompt(easy, hard) == fixture_text(
            "interpolation_prompt_hiking_quadratic.txt"
        )
        easy = test_dataset.gsm8k_record(conftest.BUS_QUESTION)
        hard = test_dataset.math_record(conftest.RAMP_QUESTION)
        assert build_interpolation_prompt(easy, hard) == fixture_text(
            "interpolation_prompt_bus_ramp.txt"
        )
        assert build_difficulty_prompt(
            conftest.COINS_QUESTION, conftest.MARATHON_QUESTION
        ) == fixture_text("difficulty_prompt_coins_marathon.txt")
        assert (
            parse_difficulty_verdict(
                fixture_text("difficulty_judgement_coins_marathon.txt")
            )
            is Verdict.PROBLEM_2
        )
        assert (
            parse_difficulty_verdict(
                fixture_text("difficulty_judgement_lemonade_tank.txt")
            )
            is Verdict.TIE
        )


@requires_kernel
def test_criterion_9_live_kernel():
    with budget("criterion 9: live kernel", 30.0):
        session = start_session(["node", str(KERNEL_JS)], timeout_ms=10_000)
        try:
            assert session.state is SessionState.LIVE  # handshake inside 5s
            session.execute("x = 4*85")
            result = session.execute("x")
            assert result.status is ExecStatus.OK
            assert result.value_repr == "340"

            result = session.execute("1/0")
            assert result.status is ExecStatus.EXCEPTION
            assert "ZeroDivisionError" in result.error_repr

            result = session.execute("while True: pass", timeout_ms=1000)
            assert result.status is ExecStatus.TIMEOUT
            assert session.state is SessionState.LIVE  # restarted

            # protocol purity: user prints come back in the frame, and the
            # kernel's stdout carries nothing but frames
            probe = subprocess.run(
                ["node", str(KERNEL_JS)],
                input=json.dumps(
                    {"id": 1, "op": "exec", "code": "print('RAW-SENTINEL-314')"}
                )
                + "\n",
                capture_output=True,
                text=True,
                timeout=20,
            )
            frames = [json.loads(line) for line in probe.stdout.splitlines() if line]
            assert all(isinstance(f, dict) for f in frames)
            reply = next(f for f in frames if f.get("id") == 1)
            assert reply["stdout"] == "RAW-SENTINEL-314\n"
        finally:
            close_session(session)


@requires_kernel
def test_criterion_10_end_to_end_solve():
    with budget("criterion 10: end-to-end solve", 30.0):
        outputs = [
            "<|text|>Split the computation.<|endofblock|>",
            "<|code|>sentinel = 123 * 457\nsentinel<|endofblock|>",
            "<|text|>The sentinel value is 56211.<|endofblock|>",
            "<|endofmessage|>",
        ]
        session = start_session(["node", str(KERNEL_JS)], timeout_ms=10_000)
        try:
            with MockCompletionServer(outputs) as server:
                from lcekit.orchestrator import HttpCompletionClient

                client = HttpCompletionClient(server.url)
                trace = solve("What is 123*457?", client, session)
        finally:
            close_session(session)
        assert trace.termination is Termination.END_OF_MESSAGE
        conv = trace.conversation
        execution = conv.messages[2].blocks[2]
        assert execution.kind is BlockKind.EXECUTION
        assert execution.content == "56211"  # computed by the kernel, not scripted
        parse(serialize(conv))  # well-formed end to end
