"""Topic registry, subscriptions, and the zero-copy publish path.

The registry is a hash map from topic name to a topic record holding the
per-topic sequence counter and the subscriber entries with their message
queues. Publishing appends one envelope to every subscriber queue of the
topic; all of those envelopes share the identical payload object, which is
what makes the transfer zero-copy. Payload content is immutable after
construction, so concurrent readers need no coordination.

Locking model: each topic record has a ``gate`` serializing whole publish
calls (this makes per-topic ordering total across publishers) and an inner
``lock`` protecting the record's structures. The inner lock is held only for
short, non-blocking sections; a publisher waiting for space under the
``block`` policy waits on a per-subscriber condition built on the inner
lock, so dispatchers can keep draining while it waits.
"""

from __future__ import annotations

import itertools
import threading
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator

from .clock import Clock, SystemClock
from .errors import InvalidCapacity, InvalidTopicName, NotRunning

TOPIC_MAX_BYTES = 255

_payload_ids = itertools.count(1)


def validate_topic_name(name: str) -> str:
    """Return ``name`` if it is a valid topic name, else raise InvalidTopicName."""
    if not isinstance(name, str):
        raise InvalidTopicName(f"topic name must be a string, got {type(name).__name__}")
    encoded = name.encode("utf-8")
    if not encoded:
        raise InvalidTopicName("topic name must not be empty")
    if len(encoded) > TOPIC_MAX_BYTES:
        raise InvalidTopicName(
            f"topic name is {len(encoded)} bytes when UTF-8 encoded, max {TOPIC_MAX_BYTES}")
    if b"\x00" in encoded:
        raise InvalidTopicName("topic name must not contain NUL")
    return name


class Payload:
    """Immutable message content with a process-unique instance id.

    The id makes zero-copy delivery observable: every subscriber of a publish
    sees the same ``instance_id`` as the publisher. Constructing from ``bytes``
    keeps a reference (no copy); other buffer types are copied once to freeze
    the content.
    """

    __slots__ = ("_data", "_instance_id")

    def __init__(self, data: bytes | bytearray | memoryview):
        if isinstance(data, bytes):
            self._data = data
        else:
            self._data = bytes(data)
        self._instance_id = next(_payload_ids)

    @property
    def data(self) -> bytes:
        return self._data

    @property
    def size(self) -> int:
        return len(self._data)

    @property
    def instance_id(self) -> int:
        return self._instance_id

    def __len__(self) -> int:
        return len(self._data)

    def __repr__(self) -> str:
        return f"Payload(size={len(self._data)}, instance_id={self._instance_id})"


@dataclass(frozen=True, slots=True)
class MessageEnvelope:
    """One published message: topic, per-topic sequence, timestamp, payload handle."""

    topic: str
    seq: int
    publish_ts: int  # monotonic ns at publish time
    payload: Payload


class DropPolicy(Enum):
    """What a publisher does when a bounded subscriber queue is full."""

    BLOCK = "block"
    DROP_OLDEST = "drop_oldest"
    REJECT_NEW = "reject_new"


@dataclass(frozen=True, slots=True)
class PublishReceipt:
    """Outcome of one publish call.

    ``rejected`` lists subscriber ids whose full queue refused the envelope
    under ``reject_new``; that is reported here rather than failing the
    publish. ``evicted`` counts envelopes displaced by ``drop_oldest``.
    """

    seq: int
    delivered_to: int
    rejected: tuple[int, ...] = ()
    evicted: int = 0


@dataclass(frozen=True, slots=True)
class SubscriberQueueStats:
    queued: int
    evicted: int
    rejected: int


Callback = Callable[[MessageEnvelope], None]


class SubscriptionEntry:
    """A subscriber of one topic: callback plus FIFO queue with drop policy."""

    __slots__ = ("subscriber_id", "topic", "callback", "queue", "capacity",
                 "drop_policy", "active", "in_flight", "not_full", "evicted",
                 "rejected", "record")

    def __init__(self, subscriber_id: int, topic: str, callback: Callback,
                 capacity: int | None, drop_policy: DropPolicy,
                 record: "TopicRecord"):
        self.subscriber_id = subscriber_id
        self.topic = topic
        self.callback = callback
        self.queue: deque[MessageEnvelope] = deque()
        self.capacity = capacity
        self.drop_policy = drop_policy
        self.active = True
        self.in_flight = False  # a dispatched callback task exists for this entry
        self.not_full = threading.Condition(record.lock)
        self.evicted = 0
        self.rejected = 0
        self.record = record


class TopicRecord:
    """Per-topic state: next sequence number and the subscriber list."""

    __slots__ = ("name", "next_seq", "subscribers", "lock", "gate")

    def __init__(self, name: str):
        self.name = name
        self.next_seq = 0
        self.subscribers: list[SubscriptionEntry] = []
        self.lock = threading.Lock()
        self.gate = threading.Lock()  # serializes publish calls on this topic


@dataclass(frozen=True, slots=True)
class DeliveryCounters:
    """Registry-wide delivery accounting.

    attempted = enqueued + rejected, and every enqueued envelope ends up
    dispatched, evicted, discarded, or still pending in a queue.
    """

    published: int
    attempted: int
    enqueued: int
    evicted: int
    rejected: int
    discarded: int


class TopicRegistry:
    """Hash map of topics with thread-safe subscribe/publish operations.

    ``publish`` may be called from any thread, including from inside
    subscriber callbacks. Dispatching queued envelopes to callbacks is the
    broker's job; the registry only stores them.
    """

    def __init__(self, clock: Clock | None = None):
        self.clock: Clock = clock if clock is not None else SystemClock()
        self._topics: dict[str, TopicRecord] = {}
        self._lock = threading.Lock()
        self._subscribers: dict[int, SubscriptionEntry] = {}
        self._next_subscriber_id = itertools.count(1)
        self._topic_listeners: list[Callable[[str], None]] = []
        self._publish_listeners: list[Callable[[], None]] = []
        self._sealed = False
        # envelopes enqueued but not yet fully processed (dispatched or dropped);
        # zero means the system is quiescent
        self._outstanding = 0
        self._idle = threading.Condition(threading.Lock())
        # aggregate counters, guarded by self._idle's lock
        self._published = 0
        self._attempted = 0
        self._enqueued = 0
        self._evicted = 0
        self._rejected = 0
        self._discarded = 0

    # -- topic management -------------------------------------------------

    def create_topic(self, name: str) -> TopicRecord:
        """Create (or fetch, idempotently) the record for ``name``."""
        validate_topic_name(name)
        record, _created = self._ensure_topic(name)
        return record

    def _ensure_topic(self, name: str) -> tuple[TopicRecord, bool]:
        with self._lock:
            record = self._topics.get(name)
            if record is not None:
                return record, False
            record = TopicRecord(name)
            self._topics[name] = record
            listeners = list(self._topic_listeners)
        # Listeners run outside the registry lock, before the caller proceeds,
        # so a dynamically-attached subscriber (e.g. the logger in match-all
        # mode) never misses the first publish on a new topic.
        for fn in listeners:
            fn(name)
        return record, True

    def topics(self) -> list[str]:
        with self._lock:
            return list(self._topics)

    def topic_record(self, name: str) -> TopicRecord | None:
        with self._lock:
            return self._topics.get(name)

    def records(self) -> list[TopicRecord]:
        with self._lock:
            return list(self._topics.values())

    def add_topic_listener(self, fn: Callable[[str], None]) -> None:
        """Call ``fn(name)`` whenever a new topic is created."""
        with self._lock:
            self._topic_listeners.append(fn)

    def remove_topic_listener(self, fn: Callable[[str], None]) -> None:
        with self._lock:
            try:
                self._topic_listeners.remove(fn)
            except ValueError:
                pass

    def add_publish_listener(self, fn: Callable[[], None]) -> None:
        """Call ``fn()`` after each publish completes (broker wakeup hook)."""
        with self._lock:
            self._publish_listeners.append(fn)

    # -- subscriptions -----------------------------------------------------

    def subscribe(self, topic: str, callback: Callback, *,
                  capacity: int | None = None,
                  drop_policy: DropPolicy = DropPolicy.DROP_OLDEST) -> int:
        """Register ``callback`` on ``topic`` (auto-created) and return its id.

        ``capacity=None`` means unbounded; the drop policy only matters for
        bounded queues.
        """
        validate_topic_name(topic)
        if capacity is not None and (not isinstance(capacity, int) or capacity <= 0):
            raise InvalidCapacity(f"capacity must be positive or None, got {capacity!r}")
        if not isinstance(drop_policy, DropPolicy):
            raise InvalidCapacity(f"unknown drop policy {drop_policy!r}")
        record, _ = self._ensure_topic(topic)
        subscriber_id = next(self._next_subscriber_id)
        entry = SubscriptionEntry(subscriber_id, topic, callback, capacity,
                                  drop_policy, record)
        with record.lock:
            record.subscribers.append(entry)
        with self._lock:
            self._subscribers[subscriber_id] = entry
        return subscriber_id

    def unsubscribe(self, subscriber_id: int) -> bool:
        """Remove the subscription, discarding its queued envelopes."""
        with self._lock:
            entry = self._subscribers.pop(subscriber_id, None)
        if entry is None:
            return False
        record = entry.record
        with record.lock:
            entry.active = False
            discarded = len(entry.queue)
            entry.queue.clear()
            try:
                record.subscribers.remove(entry)
            except ValueError:
                pass
            # wake publishers blocked on this queue so they can skip it
            entry.not_full.notify_all()
        if discarded:
            self._account(discarded=discarded)
            self._outstanding_dec(discarded)
        return True

    def subscriber_count(self, topic: str) -> int:
        record = self.topic_record(topic)
        if record is None:
            return 0
        with record.lock:
            return len(record.subscribers)

    def subscriber_stats(self, subscriber_id: int) -> SubscriberQueueStats | None:
        with self._lock:
            entry = self._subscribers.get(subscriber_id)
        if entry is None:
            return None
        with entry.record.lock:
            return SubscriberQueueStats(len(entry.queue), entry.evicted, entry.rejected)

    # -- publish -----------------------------------------------------------

    def publish(self, topic: str, payload: Payload | bytes | bytearray | memoryview,
                *, now_ns: int | None = None) -> PublishReceipt:
        """Append one envelope to every subscriber queue of ``topic``.

        Every appended envelope shares the identical payload instance. The
        per-topic gate makes concurrent publishes totally ordered on the
        topic, so each subscriber observes strictly increasing sequence
        numbers. With the ``block`` policy this call waits for queue space;
        the other policies never block.
        """
        if self._sealed:
            raise NotRunning("publishes are no longer accepted (broker stopped)")
        validate_topic_name(topic)
        if not isinstance(payload, Payload):
            payload = Payload(payload)
        record, _ = self._ensure_topic(topic)

        rejected: list[int] = []
        delivered = 0
        evicted = 0
        gone = 0
        with record.gate:
            with record.lock:
                seq = record.next_seq
                record.next_seq += 1
                targets = [e for e in record.subscribers if e.active]
            ts = now_ns if now_ns is not None else self.clock.now_ns()
            envelope = MessageEnvelope(topic=topic, seq=seq, publish_ts=ts,
                                       payload=payload)
            with record.lock:
                for entry in targets:
                    outcome = self._append(entry, envelope)
                    if outcome is _Appended.OK:
                        delivered += 1
                    elif outcome is _Appended.REJECTED:
                        rejected.append(entry.subscriber_id)
                    elif outcome is _Appended.EVICTED:
                        delivered += 1
                        evicted += 1
                    else:  # unsubscribed while we waited for space
                        gone += 1
        self._account(published=1, attempted=len(targets), enqueued=delivered,
                      evicted=evicted, rejected=len(rejected), discarded=gone)
        if delivered:
            self._outstanding_inc(delivered)
            if evicted:
                self._outstanding_dec(evicted)
        with self._lock:
            listeners = list(self._publish_listeners)
        for fn in listeners:
            fn()
        return PublishReceipt(seq=seq, delivered_to=delivered,
                              rejected=tuple(rejected), evicted=evicted)

    @staticmethod
    def _append(entry: SubscriptionEntry, envelope: MessageEnvelope) -> "_Appended":
        # caller holds entry.record.lock
        evicted = False
        if entry.capacity is not None:
            while len(entry.queue) >= entry.capacity:
                if entry.drop_policy is DropPolicy.REJECT_NEW:
                    entry.rejected += 1
                    return _Appended.REJECTED
                if entry.drop_policy is DropPolicy.DROP_OLDEST:
                    entry.queue.popleft()
                    entry.evicted += 1
                    evicted = True
                    continue
                # BLOCK: wait() releases the record lock so dispatch can drain
                entry.not_full.wait()
                if not entry.active:
                    return _Appended.GONE
        entry.queue.append(envelope)
        return _Appended.EVICTED if evicted else _Appended.OK

    # -- accounting / quiescence --------------------------------------------

    def _account(self, *, published: int = 0, attempted: int = 0, enqueued: int = 0,
                 evicted: int = 0, rejected: int = 0, discarded: int = 0) -> None:
        with self._idle:
            self._published += published
            self._attempted += attempted
            self._enqueued += enqueued
            self._evicted += evicted
            self._rejected += rejected
            self._discarded += discarded

    def counters(self) -> DeliveryCounters:
        with self._idle:
            return DeliveryCounters(self._published, self._attempted,
                                    self._enqueued, self._evicted,
                                    self._rejected, self._discarded)

    def _outstanding_inc(self, n: int) -> None:
        with self._idle:
            self._outstanding += n

    def _outstanding_dec(self, n: int) -> None:
        with self._idle:
            self._outstanding -= n
            if self._outstanding <= 0:
                self._idle.notify_all()

    def outstanding(self) -> int:
        with self._idle:
            return self._outstanding

    def wait_outstanding_zero(self, timeout: float | None = None) -> bool:
        """Block until no enqueued envelope awaits processing. True on success."""
        with self._idle:
            return self._idle.wait_for(lambda: self._outstanding == 0, timeout)

    def pending_total(self) -> int:
        total = 0
        for record in self.records():
            with record.lock:
                for entry in record.subscribers:
                    total += len(entry.queue)
        return total

    def clear_queues(self) -> int:
        """Discard all queued envelopes; returns how many were dropped."""
        dropped = 0
        for record in self.records():
            with record.lock:
                for entry in record.subscribers:
                    dropped += len(entry.queue)
                    entry.queue.clear()
                    entry.not_full.notify_all()
        if dropped:
            self._account(discarded=dropped)
            self._outstanding_dec(dropped)
        return dropped

    def seal(self) -> None:
        """Stop accepting publishes (used by broker shutdown)."""
        self._sealed = True

    @property
    def sealed(self) -> bool:
        return self._sealed

    def __iter__(self) -> Iterator[str]:
        return iter(self.topics())


class _Appended(Enum):
    OK = "ok"
    EVICTED = "evicted"
    REJECTED = "rejected"
    GONE = "gone"
