"""Dispatch engine: a scan loop feeding subscriber callbacks to a worker pool.

The scan context never runs callbacks itself; it claims the head envelope of
each subscriber queue and submits the callback as a task. At most one task
per subscriber is in flight at any time, which gives per-subscriber FIFO
delivery and callback serialization while different subscribers run in
parallel across workers.

While the loop is running, a completing task claims its subscriber's next
queued envelope directly (without a round trip through the scan thread), so
a busy subscriber's deliveries chain from worker to worker. In single-step
mode (``dispatch_pending`` called manually on a broker that was never
started) chaining is off: each call submits at most one task per subscriber,
which is what step-debugging tests rely on.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

from .core import MessageEnvelope, SubscriptionEntry, TopicRegistry
from .errors import AlreadyStarted, DrainTimeout, InvalidConfig, NotRunning

log = logging.getLogger("fastcycle.broker")

_SCAN_PARK_S = 0.1  # upper bound on event-wait; a wakeup re-checks everything


def _default_workers() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class BrokerConfig:
    """Broker sizing and wakeup behavior.

    ``poll_interval`` of None selects event notification: the scan loop parks
    until a publish signals it. A positive value selects fixed-interval
    polling instead.
    """

    worker_count: int = field(default_factory=_default_workers)
    poll_interval: float | None = None
    shutdown_drain_timeout: float = 10.0

    def validate(self) -> None:
        if not isinstance(self.worker_count, int) or self.worker_count < 1:
            raise InvalidConfig(f"worker_count must be >= 1, got {self.worker_count!r}")
        if self.poll_interval is not None and self.poll_interval <= 0:
            raise InvalidConfig("poll_interval must be positive when polling")
        if self.shutdown_drain_timeout <= 0:
            raise InvalidConfig("shutdown_drain_timeout must be positive")


@dataclass(frozen=True, slots=True)
class BrokerStats:
    """Snapshot of delivery accounting.

    Conservation: ``attempted_deliveries == dispatched + dropped + pending
    + in_flight`` once publishers have quiesced.
    """

    published: int
    dispatched: int
    dropped: int
    in_flight: int
    pending: int
    attempted_deliveries: int
    callback_errors: int
    queue_wait_ns_total: int
    queue_wait_ns_max: int


class Broker:
    """Runs the scan loop and the worker pool over a topic registry."""

    _NEW, _RUNNING, _STOPPED = range(3)

    def __init__(self, registry: TopicRegistry, config: BrokerConfig | None = None):
        self.config = config or BrokerConfig()
        self.config.validate()
        self.registry = registry
        self._pool = ThreadPoolExecutor(max_workers=self.config.worker_count,
                                        thread_name_prefix="fastcycle-worker")
        self._wake = threading.Event()
        self._halt = threading.Event()
        self._scan_thread: threading.Thread | None = None
        self._state = self._NEW
        self._state_lock = threading.Lock()
        self._chain = False
        self._stats_lock = threading.Lock()
        self._dispatched = 0
        self._in_flight = 0
        self._callback_errors = 0
        self._wait_ns_total = 0
        self._wait_ns_max = 0
        registry.add_publish_listener(self._wake.set)

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> "Broker":
        """Start the scan loop. Publishes made before start are dispatched."""
        with self._state_lock:
            if self._state != self._NEW:
                raise AlreadyStarted("broker was already started")
            self._state = self._RUNNING
            self._chain = True
        thread = threading.Thread(target=self._scan_loop, name="fastcycle-scan",
                                  daemon=True)
        self._scan_thread = thread
        thread.start()
        self._wake.set()
        return self

    @property
    def running(self) -> bool:
        return self._state == self._RUNNING

    def stop(self, mode: str = "drain") -> BrokerStats:
        """Stop the broker.

        ``drain``: seal the registry, dispatch everything still queued and
        wait for callbacks to complete (bounded by the configured timeout),
        then join the workers. ``immediate``: in-flight callbacks complete,
        queued envelopes are counted as dropped.
        """
        if mode not in ("drain", "immediate"):
            raise InvalidConfig(f"unknown stop mode {mode!r}")
        with self._state_lock:
            if self._state != self._RUNNING:
                raise NotRunning("broker is not running")
            self._state = self._STOPPED
        self.registry.seal()
        if mode == "drain":
            ok = self.registry.wait_outstanding_zero(self.config.shutdown_drain_timeout)
            self._halt_scan()
            if not ok:
                remaining = self.registry.clear_queues()
                self._pool.shutdown(wait=True)
                raise DrainTimeout(remaining, stats=self.stats())
            self._pool.shutdown(wait=True)
        else:
            self._chain = False
            self._halt_scan()
            self.registry.clear_queues()
            self._pool.shutdown(wait=True)
        return self.stats()

    def _halt_scan(self) -> None:
        self._halt.set()
        self._wake.set()
        if self._scan_thread is not None:
            self._scan_thread.join()
            self._scan_thread = None

    def run_on_worker(self, fn: Callable[[], None]) -> None:
        """Submit arbitrary work to the pool (serve timers use this)."""
        self._pool.submit(fn)

    # -- dispatch -----------------------------------------------------------

    def dispatch_pending(self) -> int:
        """One scan pass: submit the head envelope of every idle subscriber.

        Returns the number of tasks submitted. Safe to call manually on a
        broker that has not been started (single-step mode).
        """
        if self._state == self._STOPPED:
            raise NotRunning("broker is stopped")
        return self._scan_once()

    def _scan_once(self) -> int:
        submitted = 0
        for record in self.registry.records():
            batch: list[tuple[SubscriptionEntry, MessageEnvelope]] = []
            with record.lock:
                for entry in record.subscribers:
                    if entry.active and not entry.in_flight and entry.queue:
                        envelope = entry.queue.popleft()
                        entry.in_flight = True
                        entry.not_full.notify_all()
                        batch.append((entry, envelope))
            for entry, envelope in batch:
                self._submit(entry, envelope)
                submitted += 1
        return submitted

    def wait_idle(self, timeout: float | None = None) -> bool:
        """Block until every enqueued envelope has been processed."""
        return self.registry.wait_outstanding_zero(timeout)

    def _scan_loop(self) -> None:
        poll = self.config.poll_interval
        while not self._halt.is_set():
            if poll is None:
                self._wake.wait(_SCAN_PARK_S)
                self._wake.clear()
            else:
                time.sleep(poll)
            if self._halt.is_set():
                break
            self.dispatch_pending()

    def _submit(self, entry: SubscriptionEntry, envelope: MessageEnvelope) -> None:
        self._pool.submit(self._run_task, entry, envelope)

    def _run_task(self, entry: SubscriptionEntry, envelope: MessageEnvelope) -> None:
        wait_ns = self.registry.clock.now_ns() - envelope.publish_ts
        with self._stats_lock:
            self._in_flight += 1
            self._wait_ns_total += wait_ns
            if wait_ns > self._wait_ns_max:
                self._wait_ns_max = wait_ns
        try:
            entry.callback(envelope)
        except Exception:
            with self._stats_lock:
                self._callback_errors += 1
            log.warning("subscriber %d callback failed on topic %r",
                        entry.subscriber_id, entry.topic, exc_info=True)
        finally:
            nxt: MessageEnvelope | None = None
            record = entry.record
            with record.lock:
                if self._chain and entry.active and entry.queue:
                    nxt = entry.queue.popleft()
                    entry.not_full.notify_all()
                    # entry.in_flight stays True for the chained task
                else:
                    entry.in_flight = False
            if nxt is not None:
                self._submit(entry, nxt)
            with self._stats_lock:
                self._in_flight -= 1
                self._dispatched += 1
            self.registry._outstanding_dec(1)

    # -- stats ----------------------------------------------------------------

    def stats(self) -> BrokerStats:
        counters = self.registry.counters()
        with self._stats_lock:
            dispatched = self._dispatched
            in_flight = self._in_flight
            errors = self._callback_errors
            wait_total = self._wait_ns_total
            wait_max = self._wait_ns_max
        dropped = counters.evicted + counters.rejected + counters.discarded
        return BrokerStats(published=counters.published,
                           dispatched=dispatched,
                           dropped=dropped,
                           in_flight=in_flight,
                           pending=self.registry.pending_total(),
                           attempted_deliveries=counters.attempted,
                           callback_errors=errors,
                           queue_wait_ns_total=wait_total,
                           queue_wait_ns_max=wait_max)
