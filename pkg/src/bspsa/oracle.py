"""External match source: a subprocess speaking newline-delimited JSON.

The tuner writes one request per line to the child's stdin::

    {"id": 17, "theta_plus": {"p0": 3, ...}, "theta_minus": {"p0": -1, ...}}

and reads exactly one response line before sending the next request::

    {"id": 17, "result": 1}

``result`` is the two-game score of the ``theta_plus`` engine, an integer
in ``[-2, 2]``.  Every line is UTF-8 JSON terminated by ``\\n``.

Session state is checkpointed to a single JSON file with an atomic
write-then-rename, so a crashed or interrupted session resumes exactly
where the last checkpoint left off.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import queue
import shlex
import subprocess
import tempfile
import threading
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bspsa.harness import perturbation_rng
from bspsa.optimizers import OUTCOMES, Method, Tuner, TunerState

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA_VERSION = 1
DEFAULT_CHECKPOINT_EVERY = 100

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_PROTOCOL = 3
EXIT_ORACLE = 4


class ProtocolError(Exception):
    """The oracle sent something that is not a valid response."""


class OracleError(Exception):
    """The oracle process died, closed its output or timed out."""


class CheckpointError(Exception):
    """A checkpoint is missing, unreadable or belongs to another config."""


@dataclass(frozen=True)
class OracleRequest:
    id: int
    theta_plus: dict[str, int | float]
    theta_minus: dict[str, int | float]


@dataclass(frozen=True)
class OracleResponse:
    id: int
    result: int


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def encode_request(req: OracleRequest) -> bytes:
    if set(req.theta_plus) != set(req.theta_minus):
        msg = "theta_plus and theta_minus must name the same parameters"
        raise ValueError(msg)
    doc = {"id": req.id, "theta_plus": req.theta_plus, "theta_minus": req.theta_minus}
    return (json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def encode_response(resp: OracleResponse) -> bytes:
    return (json.dumps({"id": resp.id, "result": resp.result}, separators=(",", ":")) + "\n").encode("utf-8")


def _parse_line(line: bytes | str) -> dict:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            msg = f"line is not valid UTF-8 ({exc.reason} at byte {exc.start}): {line!r}"
            raise ProtocolError(msg) from None
    text = line[:-1] if line.endswith("\n") else line
    if "\n" in text:
        msg = f"one JSON object per line expected: {line!r}"
        raise ProtocolError(msg)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        msg = f"malformed JSON ({exc.msg}): {text!r}"
        raise ProtocolError(msg) from None
    if not isinstance(doc, dict):
        msg = f"expected a JSON object: {text!r}"
        raise ProtocolError(msg)
    return doc


def decode_response(line: bytes | str, expected_id: int | None = None) -> OracleResponse:
    """Parse and validate one response line."""
    doc = _parse_line(line)
    if set(doc) != {"id", "result"}:
        msg = f"response must have exactly the keys 'id' and 'result': {doc!r}"
        raise ProtocolError(msg)
    if not _is_int(doc["id"]):
        msg = f"response id must be an integer: {doc!r}"
        raise ProtocolError(msg)
    result = doc["result"]
    if not _is_int(result) or result not in OUTCOMES:
        msg = f"result must be an integer in [-2, 2]: {doc!r}"
        raise ProtocolError(msg)
    if expected_id is not None and doc["id"] != expected_id:
        msg = f"response id {doc['id']} does not match outstanding request {expected_id}"
        raise ProtocolError(msg)
    return OracleResponse(doc["id"], result)


def decode_request(line: bytes | str) -> OracleRequest:
    """Parse one request line (the oracle side of the protocol)."""
    doc = _parse_line(line)
    if set(doc) != {"id", "theta_plus", "theta_minus"}:
        msg = f"request must have keys 'id', 'theta_plus', 'theta_minus': {doc!r}"
        raise ProtocolError(msg)
    if not _is_int(doc["id"]):
        msg = f"request id must be an integer: {doc!r}"
        raise ProtocolError(msg)
    plus, minus = doc["theta_plus"], doc["theta_minus"]
    if not isinstance(plus, dict) or not isinstance(minus, dict) or set(plus) != set(minus):
        msg = "theta_plus and theta_minus must be objects over the same names"
        raise ProtocolError(msg)
    for v in (*plus.values(), *minus.values()):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            msg = f"parameter values must be finite numbers: {doc!r}"
            raise ProtocolError(msg)
    return OracleRequest(doc["id"], plus, minus)


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config_hash: str
    method: str
    k: int
    theta: list[float]
    rng_state: dict
    spreads: list[float] | None = None
    precision: list[float] | None = None
    schema_version: int = CHECKPOINT_SCHEMA_VERSION

    @classmethod
    def capture(cls, config_hash: str, state: TunerState, rng_state: dict) -> Checkpoint:
        return cls(
            config_hash=config_hash,
            method=state.method.value,
            k=state.k,
            theta=[float(v) for v in state.theta],
            rng_state=rng_state,
            spreads=None if state.spreads is None else [float(v) for v in state.spreads],
            precision=None if state.precision is None else [float(v) for v in state.precision.ravel()],
        )

    def restore(self, tuner: Tuner) -> tuple[TunerState, np.random.Generator]:
        n = tuner.n_params
        if len(self.theta) != n:
            msg = f"checkpoint has {len(self.theta)} parameters, config has {n}"
            raise CheckpointError(msg)
        spreads = None if self.spreads is None else np.array(self.spreads, dtype=np.float64)
        precision = None
        if self.precision is not None:
            precision = np.array(self.precision, dtype=np.float64).reshape(n, n)
        state = TunerState(Method(self.method), self.k, np.array(self.theta), tuner.tau, spreads, precision)
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = self.rng_state
        return state, rng


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Atomically replace ``path`` with the checkpoint document."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = json.dumps(ckpt.__dict__, sort_keys=True, allow_nan=False)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
            fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        msg = f"no checkpoint at {path}; nothing to resume"
        raise CheckpointError(msg)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
            msg = f"unsupported checkpoint schema version {doc.get('schema_version')!r}"
            raise CheckpointError(msg)
        return Checkpoint(**doc)
    except (json.JSONDecodeError, TypeError) as exc:
        msg = f"unreadable checkpoint {path}: {exc}"
        raise CheckpointError(msg) from exc


def config_hash(tuner: Tuner, seed: int) -> str:
    doc = {"tuner": tuner.to_dict(), "seed": seed}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# subprocess driver


class OracleProcess:
    """A running oracle with at most one request outstanding."""

    def __init__(self, command: str | Sequence[str], timeout: float | None = None) -> None:
        args = shlex.split(command) if isinstance(command, str) else list(command)
        if not args:
            msg = "empty oracle command"
            raise OracleError(msg)
        try:
            self._proc = subprocess.Popen(args, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0)
        except OSError as exc:
            msg = f"cannot start oracle {args[0]!r}: {exc}"
            raise OracleError(msg) from exc
        self._timeout = timeout
        self._lines: queue.Queue[bytes] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, name="oracle-reader", daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        stdout = self._proc.stdout
        while True:
            line = stdout.readline()
            self._lines.put(line)
            if not line:
                return

    def request(self, req: OracleRequest) -> OracleResponse:
        try:
            self._proc.stdin.write(encode_request(req))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            msg = f"oracle stopped accepting requests at id {req.id} (exit code {self._proc.poll()})"
            raise OracleError(msg) from exc
        try:
            line = self._lines.get(timeout=self._timeout)
        except queue.Empty:
            self.kill()
            msg = f"no response to request {req.id} within {self._timeout} s"
            raise OracleError(msg) from None
        if not line:
            msg = f"oracle closed its output before answering request {req.id} (exit code {self._proc.wait()})"
            raise OracleError(msg)
        if not line.endswith(b"\n"):
            msg = f"oracle exited mid-line while answering request {req.id}: {line!r}"
            raise OracleError(msg)
        return decode_response(line, req.id)

    def kill(self) -> None:
        if self._proc.poll() is None:
            self._proc.kill()
        self._proc.wait()

    def close(self, grace: float = 5.0) -> None:
        if self._proc.stdin and not self._proc.stdin.closed:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
        try:
            self._proc.wait(timeout=grace)
        except subprocess.TimeoutExpired:
            self.kill()

    def __enter__(self) -> OracleProcess:
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()
        else:
            self.kill()


def run_tuning_session(
    tuner: Tuner,
    seed: int,
    oracle_command: str | Sequence[str],
    checkpoint_path: str | Path,
    *,
    resume: bool = False,
    checkpoint_every: int = DEFAULT_CHECKPOINT_EVERY,
    timeout: float | None = None,
    on_update: Callable[[TunerState], None] | None = None,
) -> TunerState:
    """Tune against an external oracle until ``n_iterations`` matches are scored.

    A fresh session refuses to overwrite an existing checkpoint; pass
    ``resume=True`` to continue from it instead.  The checkpoint is written
    before the first request, every ``checkpoint_every`` updates, at the end,
    and on keyboard interrupt.  Protocol and oracle failures leave the last
    written checkpoint in place.
    """
    if checkpoint_every < 1:
        msg = f"checkpoint_every must be >= 1, got {checkpoint_every}"
        raise ValueError(msg)
    checkpoint_path = Path(checkpoint_path)
    digest = config_hash(tuner, seed)
    if resume:
        ckpt = load_checkpoint(checkpoint_path)
        if ckpt.config_hash != digest:
            msg = f"checkpoint {checkpoint_path} was written for a different configuration"
            raise CheckpointError(msg)
        state, rng = ckpt.restore(tuner)
        logger.info("resuming at iteration %d from %s", state.k, checkpoint_path)
    else:
        if checkpoint_path.exists():
            msg = f"checkpoint {checkpoint_path} already exists; resume it or remove it"
            raise CheckpointError(msg)
        state, rng = tuner.initial_state(), perturbation_rng(seed)
        save_checkpoint(checkpoint_path, Checkpoint.capture(digest, state, rng.bit_generator.state))

    n_iterations = tuner.schedule.n_iterations
    if state.k > n_iterations:
        return state

    rng_state = rng.bit_generator.state
    with OracleProcess(oracle_command, timeout) as oracle:
        try:
            while state.k <= n_iterations:
                plus, minus, draw = tuner.propose(state, rng)
                req = OracleRequest(state.k, tuner.emit(plus), tuner.emit(minus))
                resp = oracle.request(req)
                state = tuner.update(state, draw, resp.result)
                rng_state = rng.bit_generator.state
                if on_update is not None:
                    on_update(state)
                if (state.k - 1) % checkpoint_every == 0 or state.k > n_iterations:
                    save_checkpoint(checkpoint_path, Checkpoint.capture(digest, state, rng_state))
        except KeyboardInterrupt:
            save_checkpoint(checkpoint_path, Checkpoint.capture(digest, state, rng_state))
            logger.warning("interrupted; checkpoint saved at iteration %d", state.k)
            raise
    return state
