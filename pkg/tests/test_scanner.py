"""Streaming scanner equivalence with the batch parser under any chunking."""

import random

from lcekit.format import (
    BlockClosed,
    BlockKind,
    BlockOpened,
    ContentChunk,
    MessageClosed,
    ParseError,
    ParseErrorKind,
    ScanFailed,
    StreamScanner,
    coalesce_events,
    conversation_events,
    parse,
    serialize,
)

from helpers import random_conversation


def scan_chunks(chunks, **scanner_kwargs):
    scanner = StreamScanner(**scanner_kwargs)
    events = []
    for chunk in chunks:
        events.extend(scanner.feed(chunk))
    events.extend(scanner.finish())
    return events


def batch_outcome(raw):
    """(events, None) on success, (None, error) on failure."""
    try:
        return conversation_events(parse(raw)), None
    except ParseError as err:
        return None, err


def assert_scan_matches_batch(raw, chunks):
    events = coalesce_events(scan_chunks(chunks))
    expected_events, expected_error = batch_outcome(raw)
    if expected_error is None:
        assert events == expected_events
    else:
        assert events and isinstance(events[-1], ScanFailed)
        got = events[-1].error
        assert got.kind is expected_error.kind
        assert got.position == expected_error.position


class TestMessageBodyMode:
    def test_block_split_inside_opener(self):
        scanner = StreamScanner(message_body=True)
        events = []
        for chunk in ["<|te", "xt|>ab", "<|endofblock|>"]:
            events.extend(scanner.feed(chunk))
        assert events == [
            BlockOpened(BlockKind.TEXT),
            ContentChunk("ab"),
            BlockClosed(),
        ]

    def test_partial_token_held_without_events(self):
        scanner = StreamScanner(message_body=True)
        assert scanner.feed("<|exec") == []
        assert scanner.pending == 6

    def test_message_close(self):
        events = scan_chunks(
            ["<|text|>done<|endofblock|><|endofmessage|>"], message_body=True
        )
        assert events == [
            BlockOpened(BlockKind.TEXT),
            ContentChunk("done"),
            BlockClosed(),
            MessageClosed(),
        ]

    def test_execution_opener_rejected_without_code(self):
        events = scan_chunks(["<|execution|>340<|endofblock|>"], message_body=True)
        assert isinstance(events[-1], ScanFailed)
        assert events[-1].error.kind is ParseErrorKind.EXECUTION_WITHOUT_CODE


class TestSingleChunkEqualsBatch:
    def test_fixture_single_chunk(self, road_trip_fixture):
        events = coalesce_events(scan_chunks([road_trip_fixture]))
        assert events == conversation_events(parse(road_trip_fixture))

    def test_six_block_fixtures(self, six_block_fixtures):
        for raw in six_block_fixtures:
            events = coalesce_events(scan_chunks([raw]))
            assert events == conversation_events(parse(raw))


class TestEverySplitPosition:
    def test_all_fixtures_every_split(self, road_trip_fixture, six_block_fixtures):
        for raw in [road_trip_fixture, *six_block_fixtures]:
            for cut in range(len(raw) + 1):
                assert_scan_matches_batch(raw, [raw[:cut], raw[cut:]])


class TestRandomChunkings:
    def test_random_multiway_chunkings(self, six_block_fixtures):
        rng = random.Random(5)
        for raw in six_block_fixtures:
            for _ in range(60):
                chunks = _random_chunks(rng, raw)
                assert_scan_matches_batch(raw, chunks)

    def test_random_conversations_random_chunks(self):
        rng = random.Random(17)
        for _ in range(60):
            raw = serialize(random_conversation(rng))
            assert_scan_matches_batch(raw, _random_chunks(rng, raw))

    def test_invalid_inputs_same_error_any_chunking(self):
        rng = random.Random(23)
        bad_inputs = [
            "junk",
            "<|endofblock|>",
            "<|user|>stray",
            "<|user|><|text|>abc",
            "<|user|><|text|>a<|text|>b<|endofblock|><|endofmessage|>",
            "<|user|><|code|>x<|endofblock|><|endofmessage|>",
            "<|assistant|><|text|>a<|endofblock|><|execution|>x<|endofblock|><|endofmessage|>",
            "<|user|><|text|>a<|endofblock|><|endofmessage|><|system|><|text|><|endofblock|><|endofmessage|>",
            "<|us",
            "<|user|><|te",
        ]
        for raw in bad_inputs:
            for _ in range(8):
                assert_scan_matches_batch(raw, _random_chunks(rng, raw))

    def test_fuzz_no_crash_and_terminal_error(self):
        rng = random.Random(31)
        pieces = [
            "<|text|>", "<|endofblock|>", "<|endofmessage|>", "<|user|>",
            "<|assistant|>", "<|", "|>", "ab", " ", "<",
        ]
        for _ in range(200):
            raw = "".join(rng.choice(pieces) for _ in range(rng.randrange(10)))
            assert_scan_matches_batch(raw, _random_chunks(rng, raw))


class TestScannerIsTerminalAfterError:
    def test_no_events_after_failure(self):
        scanner = StreamScanner()
        events = scanner.feed("garbage")
        assert isinstance(events[-1], ScanFailed)
        assert scanner.feed("<|user|>") == []
        assert scanner.finish() == []


def _random_chunks(rng, raw):
    chunks = []
    at = 0
    while at < len(raw):
        size = rng.randrange(1, 9)
        chunks.append(raw[at : at + size])
        at += size
    if rng.random() < 0.3:
        chunks.append("")
    return chunks or [""]
