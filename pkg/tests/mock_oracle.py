"""Scriptable stand-in for a match runner (standard library only).

    mock_oracle.py constant 0
    mock_oracle.py hash [--die-after N] [--kill-parent-after N]
    mock_oracle.py replay OUTCOMES_FILE
    mock_oracle.py bad-range | bad-id | bad-json | non-utf8 | extra-key | silent | eof | partial
"""

import hashlib
import json
import os
import signal
import sys


def hashed(line: bytes) -> int:
    # deterministic in the full request, so restarts answer identically
    return hashlib.sha256(line.strip()).digest()[0] % 5 - 2


def main(argv: list[str]) -> int:
    mode = argv[0]
    die_after = None
    if "--die-after" in argv:
        die_after = int(argv[argv.index("--die-after") + 1])
    kill_parent_after = None
    if "--kill-parent-after" in argv:
        kill_parent_after = int(argv[argv.index("--kill-parent-after") + 1])
    outcomes = None
    if mode == "replay":
        with open(argv[1], encoding="utf-8") as fh:
            outcomes = [int(v) for v in fh.read().split()]
    if mode == "eof":
        return 0
    out = sys.stdout.buffer
    answered = 0
    for line in sys.stdin.buffer:
        if die_after is not None and answered >= die_after:
            return 9
        if kill_parent_after is not None and answered >= kill_parent_after:
            # simulate a crash of the tuning process itself
            os.kill(os.getppid(), signal.SIGKILL)
            return 9
        req_id = json.loads(line)["id"]
        if mode == "constant":
            doc = {"id": req_id, "result": int(argv[1])}
        elif mode == "hash":
            doc = {"id": req_id, "result": hashed(line)}
        elif mode == "replay":
            doc = {"id": req_id, "result": outcomes[req_id - 1]}
        elif mode == "bad-range":
            doc = {"id": req_id, "result": 3}
        elif mode == "bad-id":
            doc = {"id": req_id + 1, "result": 0}
        elif mode == "extra-key":
            doc = {"id": req_id, "result": 0, "note": "x"}
        elif mode == "bad-json":
            out.write(b"{not json}\n")
            out.flush()
            continue
        elif mode == "non-utf8":
            out.write(b'{"id": 1, "result": "\xff"}\n')
            out.flush()
            continue
        elif mode == "partial":
            out.write(b'{"id": 1, "res')
            out.flush()
            return 0
        elif mode == "silent":
            continue
        else:
            print(f"unknown mode {mode}", file=sys.stderr)
            return 2
        out.write((json.dumps(doc) + "\n").encode("utf-8"))
        out.flush()
        answered += 1
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
