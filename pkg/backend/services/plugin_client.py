"""
Host side of the newline-delimited JSON plugin protocol.

A plugin is a child process that reads one JSON request per line on stdin
and answers with one JSON reply per line on stdout. Every request carries
an integer "id" that the reply must echo. The host keeps a transcript of
every line sent (">> ") and received ("<< ").
"""
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union
import json
import logging
import os
import queue
import shlex
import subprocess
import sys
import threading

import numpy as np

from config import settings
from services.errors import PluginError, ProtocolError

logger = logging.getLogger(__name__)

_EOF = object()

# Fixed dataset used by plugin_roundtrip
FIXTURE_COLUMNS = ["z1", "x", "y"]
FIXTURE_ROWS = [[0.5, 0, 1.0], [1.5, 1, 3.5], [2.5, 0, 2.0], [3.5, 1, 5.5]]
FIXTURE_QUERY = {"x": 1, "z": [0.5]}
FIXTURE_N_Y = 3


def encode_message(message: Dict[str, Any]) -> str:
    """Compact JSON; floats render in shortest round-trip form"""
    try:
        return json.dumps(message, separators=(",", ":"), allow_nan=False)
    except ValueError as e:
        raise PluginError(f"cannot encode plugin message: {e}") from e


def resolve_command(command: Union[str, Sequence[str]]) -> List[str]:
    """Split a command line; a leading python/python3 runs under the current interpreter"""
    parts = shlex.split(command) if isinstance(command, str) else [str(c) for c in command]
    if not parts:
        raise PluginError("plugin command is empty")
    if parts[0] in ("python", "python3"):
        parts[0] = sys.executable
    return parts


class PluginClient:
    """One plugin process, one outstanding request at a time"""

    def __init__(
        self,
        command: Union[str, Sequence[str]],
        env: Optional[Mapping[str, str]] = None,
        timeout: Optional[float] = None,
        cwd: Optional[str] = None,
    ):
        self.command = resolve_command(command)
        self.env = dict(env or {})
        self.timeout = float(timeout if timeout is not None else settings.PLUGIN_TIMEOUT)
        self.cwd = cwd
        self.transcript: List[str] = []
        self._next_id = 1
        self._proc: Optional[subprocess.Popen] = None
        self._lines: "queue.Queue[Any]" = queue.Queue()
        self._stderr: List[str] = []
        self._stderr_thread: Optional[threading.Thread] = None

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    @property
    def stderr(self) -> str:
        return "".join(self._stderr)

    def start(self):
        """Spawn the plugin process"""
        env = os.environ.copy()
        env.update(self.env)
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
                env=env,
                cwd=self.cwd,
            )
        except OSError as e:
            raise PluginError(f"cannot start plugin {self.command[0]}: {e}") from e

        threading.Thread(target=self._pump_stdout, daemon=True).start()
        self._stderr_thread = threading.Thread(target=self._pump_stderr, daemon=True)
        self._stderr_thread.start()
        logger.debug(f"Started plugin pid={self._proc.pid}: {' '.join(self.command)}")

    def _pump_stdout(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _pump_stderr(self):
        for line in self._proc.stderr:
            self._stderr.append(line)

    def request(self, op: str, **payload) -> Dict[str, Any]:
        """
        Send one request and wait for its reply

        Args:
            op: Protocol operation
            **payload: Operation fields

        Returns:
            Parsed reply
        """
        if self._proc is None:
            self.start()

        request_id = self._next_id
        self._next_id += 1
        line = encode_message({"id": request_id, "op": op, **payload})
        self.transcript.append(f">> {line}")

        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            self._reap()
            raise PluginError(f"plugin closed its input before '{op}': {e}", self.stderr) from e

        try:
            raw = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self.kill()
            raise PluginError(f"plugin timed out after {self.timeout:g}s waiting for '{op}'", self.stderr)

        if raw is _EOF:
            code = self._reap()
            raise PluginError(f"plugin exited with code {code} during '{op}'", self.stderr)

        raw = raw.rstrip("\n")
        self.transcript.append(f"<< {raw}")
        try:
            reply = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"reply to '{op}' is not JSON: {e}", "line", self.stderr) from e
        if not isinstance(reply, dict):
            raise ProtocolError(f"reply to '{op}' is not an object", "line", self.stderr)
        if reply.get("id") != request_id:
            raise ProtocolError(f"reply id {reply.get('id')!r} does not match request id {request_id}", "id", self.stderr)
        if "error" in reply:
            raise PluginError(f"plugin reported an error on '{op}': {reply['error']}", self.stderr)
        return reply

    def handshake(self) -> List[str]:
        reply = self.request("handshake")
        capabilities = reply.get("capabilities")
        if not isinstance(capabilities, list) or not all(isinstance(c, str) for c in capabilities):
            raise ProtocolError("handshake reply needs a list of capability names", "capabilities", self.stderr)
        return capabilities

    def fit(self, columns: List[str], rows: List[List[float]], treatment_col: str, outcome_col: str):
        self.request("fit", columns=columns, rows=rows, treatment_col=treatment_col, outcome_col=outcome_col)

    def predict_mean(self, x: int, z: Sequence[float]) -> float:
        reply = self.request("predict_mean", x=int(x), z=[float(v) for v in z])
        y = reply.get("y")
        if isinstance(y, bool) or not isinstance(y, (int, float)):
            raise ProtocolError("predict_mean reply needs a numeric 'y'", "y", self.stderr)
        return float(y)

    def predict_dist(self, x: int, z: Sequence[float], n_y: int, seed: int) -> np.ndarray:
        reply = self.request("predict_dist", x=int(x), z=[float(v) for v in z], n_y=int(n_y), seed=int(seed))
        samples = reply.get("samples")
        if (
            not isinstance(samples, list)
            or len(samples) != n_y
            or not all(isinstance(s, (int, float)) and not isinstance(s, bool) for s in samples)
        ):
            raise ProtocolError(f"predict_dist reply needs {n_y} numeric samples", "samples", self.stderr)
        return np.asarray(samples, dtype=float)

    def shutdown(self):
        self.request("shutdown")
        self._reap()

    def _reap(self) -> Optional[int]:
        if self._proc is None:
            return None
        try:
            code = self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.kill()
            code = self._proc.returncode
        if self._stderr_thread is not None:
            self._stderr_thread.join(timeout=1)
        return code

    def kill(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()

    def close(self):
        """Ask the plugin to shut down; kill it if that fails"""
        if self._proc is None or self._proc.poll() is not None:
            return
        try:
            self.shutdown()
        except PluginError as e:
            logger.debug(f"Plugin shutdown failed: {e}")
            self.kill()
        if self.stderr:
            logger.debug(f"Plugin stderr: {self.stderr.strip()[-500:]}")


def transcript_text(lines: List[str]) -> str:
    return "".join(f"{line}\n" for line in lines)


def run_plugin_roundtrip(
    command: Union[str, Sequence[str]],
    env: Optional[Mapping[str, str]] = None,
    timeout: Optional[float] = None,
    cwd: Optional[str] = None,
) -> str:
    """
    Handshake, fit, predict and shut down against the fixed fixture dataset

    Returns:
        Transcript text, one line per message
    """
    client = PluginClient(command, env=env, timeout=timeout, cwd=cwd)
    try:
        client.start()
        capabilities = client.handshake()
        client.fit(FIXTURE_COLUMNS, FIXTURE_ROWS, "x", "y")
        if "mean" in capabilities:
            client.predict_mean(FIXTURE_QUERY["x"], FIXTURE_QUERY["z"])
        if "distributional" in capabilities:
            client.predict_dist(FIXTURE_QUERY["x"], FIXTURE_QUERY["z"], FIXTURE_N_Y, 0)
        client.shutdown()
    finally:
        client.kill()
    return transcript_text(client.transcript)
