"""Shared test helpers."""

from typing import Any


class RecordingLoop:
    """Stand-in for the event loop when driving a party state machine by
    hand: records emissions and timers instead of scheduling them."""

    def __init__(self):
        self.now = 0
        self.sent: list[tuple[str, str, Any, int]] = []
        self.timers: list[tuple[str, Any, int]] = []

    def send(self, src, dst, msg, depart_ps):
        self.sent.append((src, dst, msg, depart_ps))
        return depart_ps

    def set_timer(self, party, tag, fire_ps):
        self.timers.append((party, tag, fire_ps))

    def messages(self):
        return [msg for (_, _, msg, _) in self.sent]
