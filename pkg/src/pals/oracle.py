"""Label sources for the active-learning loops."""

from __future__ import annotations

import select
import sys

from pals import EATING, NON_EATING
from pals.errors import OracleError


class ReplayOracle:
    """Answers from recorded ground truth; counts every query issued."""

    def __init__(self, labels):
        self.labels = dict(labels)
        self.n_queries = 0
        self.asked = []

    def query(self, instance_id, context=None):
        self.n_queries += 1
        self.asked.append(instance_id)
        try:
            return int(self.labels[instance_id])
        except KeyError:
            raise OracleError(f"no recorded label for {instance_id!r}") from None


class InteractiveOracle:
    """Console prompt: ``e`` eating, ``n`` not eating, ``skip`` declines.

    ``context`` may carry ``start_ms``/``end_ms`` to show the segment bounds.
    With ``timeout`` set, no answer within that many seconds counts as a
    decline.
    """

    ANSWERS = {"e": EATING, "n": NON_EATING}

    def __init__(self, stdin=None, stdout=None, timeout=None):
        self.stdin = stdin or sys.stdin
        self.stdout = stdout or sys.stdout
        self.timeout = timeout
        self.n_queries = 0
        self.transcript = []

    def _readline(self):
        if self.timeout is not None:
            try:
                ready, _, _ = select.select([self.stdin], [], [], self.timeout)
            except (ValueError, OSError, TypeError):
                ready = [self.stdin]
            if not ready:
                return None
        line = self.stdin.readline()
        return line if line else None

    def query(self, instance_id, context=None):
        self.n_queries += 1
        context = context or {}
        bounds = ""
        if "start_ms" in context:
            bounds = f" [{context['start_ms'] / 1000:.1f}s - {context.get('end_ms', context['start_ms']) / 1000:.1f}s]"
        while True:
            self.stdout.write(f"segment {instance_id}{bounds}: eating? (e/n/skip) ")
            self.stdout.flush()
            line = self._readline()
            if line is None:
                self.transcript.append((instance_id, None))
                raise OracleError(f"no answer for {instance_id!r}")
            raw = line.rstrip("\r\n")
            answer = raw.strip().lower()
            if answer in self.ANSWERS:
                self.transcript.append((instance_id, raw))
                return self.ANSWERS[answer]
            if answer == "skip":
                self.transcript.append((instance_id, raw))
                raise OracleError(f"query for {instance_id!r} declined")
            self.stdout.write("please answer e, n or skip\n")
