"""Buffered trace writing: one file per process, records queued per thread.

The hot path is a lock-free queue put; a flush drains the queue to disk in
arrival order, which preserves per-thread ordering (all the schema requires).
Timestamps come from the process-monotonic clock.
"""

from __future__ import annotations

import os
import queue
import threading
import time
from pathlib import Path

from .wire import encode_line, header_line

FLUSH_EVERY = 256


class TraceWriter:
    def __init__(self, out_dir: str | Path, pid: int | None = None):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.pid = os.getpid() if pid is None else pid
        self.path = self.out_dir / f"trace_{self.pid}.ndjson"
        self._fh = self.path.open("w", encoding="utf-8")
        self._fh.write(header_line() + "\n")
        self._queue: queue.SimpleQueue[str] = queue.SimpleQueue()
        self._pending = 0
        self._flush_lock = threading.Lock()
        self._closed = False

    def timestamp(self) -> int:
        return time.monotonic_ns()

    def thread_id(self) -> int:
        return threading.get_ident()

    def emit(self, obj: dict) -> None:
        if self._closed:
            return
        self._queue.put(encode_line(obj))
        self._pending += 1
        if self._pending >= FLUSH_EVERY:
            self.flush()

    def flush(self) -> None:
        with self._flush_lock:
            lines = []
            while True:
                try:
                    lines.append(self._queue.get_nowait())
                except queue.Empty:
                    break
            if lines:
                self._fh.write("\n".join(lines) + "\n")
                self._fh.flush()
            self._pending = 0

    def close(self) -> None:
        if self._closed:
            return
        self.flush()
        self._closed = True
        self._fh.close()
