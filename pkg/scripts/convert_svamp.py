#!/usr/bin/env python3
"""Sample converter: SVAMP release JSON to the unified eval JSONL.

SVAMP ships as a JSON array of records like
{"ID": "chal-1", "Body": "...", "Question": "...", "Answer": 9.0, ...}.
The harness consumes one JSON object per line with question/answer fields;
adapt this script for other upstreams (Mathematics, SimulEq) the same way.

Usage: convert_svamp.py SVAMP.json out.jsonl
"""

import json
import sys


def convert(record: dict) -> dict:
    answer = record["Answer"]
    if isinstance(answer, float) and answer.is_integer():
        answer = int(answer)
    return {
        "id": str(record["ID"]),
        "source": "other",
        "question": f"{record['Body'].strip()} {record['Question'].strip()}",
        "answer": str(answer),
    }


def main() -> None:
    if len(sys.argv) != 3:
        sys.exit(__doc__.strip())
    with open(sys.argv[1], encoding="utf-8") as fh:
        records = json.load(fh)
    with open(sys.argv[2], "w", encoding="utf-8") as out:
        for record in records:
            out.write(json.dumps(convert(record), ensure_ascii=False) + "\n")
    print(f"wrote {len(records)} problems to {sys.argv[2]}")


if __name__ == "__main__":
    main()
