"""Email corpus parsing, attachable-item extraction and request/reply mining."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator
from urllib.parse import urlsplit

import numpy as np

from .io import dumps_json
from .text import tokenize

log = logging.getLogger(__name__)

ATTACHMENT = "attachment"
URL = "url"

_URL_RE = re.compile(r"https?://[^\s<>\"']+", re.IGNORECASE)
_URL_TRAILING = ".,;:!?)]}>'\""


class CorpusParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass(frozen=True)
class Message:
    message_id: str
    thread_id: str
    timestamp: int
    sender: str
    recipients: tuple[str, ...] = ()
    sender_name: str = ""
    recipient_names: tuple[str, ...] = ()
    subject: str = ""
    body: str = ""
    attachments: tuple[tuple[str, str], ...] = ()  # (item_id, filename)

    @cached_property
    def body_urls(self) -> tuple[str, ...]:
        return tuple(m.group(0).rstrip(_URL_TRAILING) for m in _URL_RE.finditer(self.body))

    @cached_property
    def subject_tokens(self) -> tuple[str, ...]:
        return tuple(tokenize(self.subject))

    @cached_property
    def body_tokens(self) -> tuple[str, ...]:
        return tuple(tokenize(self.body))

    @property
    def tokens(self) -> tuple[str, ...]:
        """Subject tokens followed by body tokens."""
        return self.subject_tokens + self.body_tokens

    @property
    def participants(self) -> tuple[str, ...]:
        seen = dict.fromkeys((self.sender, *self.recipients))
        return tuple(seen)

    def name_tokens(self) -> frozenset[str]:
        names = [self.sender_name, *self.recipient_names]
        return frozenset(tok for name in names for tok in tokenize(name))

    def to_record(self) -> dict:
        return {
            "message_id": self.message_id,
            "thread_id": self.thread_id,
            "timestamp": self.timestamp,
            "from": self.sender,
            "to": list(self.recipients),
            "from_name": self.sender_name,
            "to_names": list(self.recipient_names),
            "subject": self.subject,
            "body": self.body,
            "attachments": [{"item_id": i, "filename": f} for i, f in self.attachments],
        }


@dataclass(frozen=True)
class Mailbox:
    user: str
    entries: tuple[tuple[str, int], ...]  # (message_id, arrival_time), time ordered

    def message_ids(self) -> list[str]:
        return [mid for mid, _ in self.entries]


@dataclass(frozen=True)
class AttachableItem:
    item_id: str
    kind: str
    associations: tuple[tuple[str, str], ...]  # (message_id, mailbox user)


@dataclass(frozen=True)
class ItemRef:
    item_id: str
    kind: str


@dataclass(frozen=True)
class Instance:
    """One request/reply pair with the items attached to the reply."""

    instance_id: str
    thread_id: str
    request: str
    reply: str
    replier: str
    t_prime: int
    relevant_items: tuple[str, ...]

    def to_record(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "thread_id": self.thread_id,
            "request": self.request,
            "reply": self.reply,
            "replier": self.replier,
            "t_prime": self.t_prime,
            "relevant_items": list(self.relevant_items),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Instance":
        return cls(
            instance_id=rec["instance_id"], thread_id=rec["thread_id"], request=rec["request"],
            reply=rec["reply"], replier=rec["replier"], t_prime=int(rec["t_prime"]),
            relevant_items=tuple(rec["relevant_items"]),
        )


def normalize_url(raw: str) -> str | None:
    """Canonical item id for a URL, or None (with a warning) if unparsable."""
    try:
        parts = urlsplit(raw.strip())
    except ValueError as exc:
        log.warning("skipping unparsable url %r: %s", raw, exc)
        return None
    if not parts.scheme or not parts.netloc:
        log.warning("skipping non-absolute url %r", raw)
        return None
    userinfo, sep, host = parts.netloc.rpartition("@")
    netloc = f"{userinfo}{sep}{host.lower()}"
    query = "&".join(
        kv for kv in parts.query.split("&")
        if kv and not kv.split("=", 1)[0].lower().startswith("utm_")
    )
    path = parts.path.rstrip("/")
    url = f"{parts.scheme.lower()}://{netloc}{path}"
    return f"{url}?{query}" if query else url


def extract_items(message: Message) -> list[ItemRef]:
    refs: dict[str, ItemRef] = {}
    for item_id, _filename in message.attachments:
        refs.setdefault(item_id, ItemRef(item_id, ATTACHMENT))
    for raw in message.body_urls:
        canonical = normalize_url(raw)
        if canonical is not None:
            refs.setdefault(canonical, ItemRef(canonical, URL))
    return list(refs.values())


class Corpus:
    """Immutable collection of messages with threads, mailboxes and items."""

    def __init__(self, messages: Iterable[Message]):
        self.messages: dict[str, Message] = {}
        for msg in messages:
            if msg.message_id in self.messages:
                raise ValueError(f"duplicate message_id {msg.message_id!r}")
            self.messages[msg.message_id] = msg

        threads: dict[str, list[Message]] = defaultdict(list)
        boxes: dict[str, list[tuple[int, str]]] = defaultdict(list)
        for msg in self.messages.values():
            threads[msg.thread_id].append(msg)
            for user in msg.participants:
                boxes[user].append((msg.timestamp, msg.message_id))
        self.threads: dict[str, tuple[str, ...]] = {
            tid: tuple(m.message_id for m in sorted(msgs, key=lambda m: (m.timestamp, m.message_id)))
            for tid, msgs in threads.items()
        }
        self.mailboxes: dict[str, Mailbox] = {
            user: Mailbox(user, tuple((mid, ts) for ts, mid in sorted(entries)))
            for user, entries in boxes.items()
        }

        self.message_items: dict[str, tuple[str, ...]] = {}
        kinds: dict[str, str] = {}
        assoc: dict[str, list[tuple[str, str]]] = defaultdict(list)
        for msg in self.messages.values():
            refs = extract_items(msg)
            self.message_items[msg.message_id] = tuple(r.item_id for r in refs)
            for ref in refs:
                kinds.setdefault(ref.item_id, ref.kind)
                for user in msg.participants:
                    assoc[ref.item_id].append((msg.message_id, user))
        self.items: dict[str, AttachableItem] = {
            iid: AttachableItem(iid, kinds[iid], tuple(assoc[iid])) for iid in sorted(assoc)
        }

    def __len__(self) -> int:
        return len(self.messages)

    def __getitem__(self, message_id: str) -> Message:
        return self.messages[message_id]

    def mailbox_messages(self, user: str) -> list[Message]:
        box = self.mailboxes.get(user)
        return [] if box is None else [self.messages[mid] for mid in box.message_ids()]

    def context(self, message_id: str, t_prime: int) -> set[str]:
        """Messages of the same thread strictly before ``t_prime``."""
        thread = self.threads[self.messages[message_id].thread_id]
        return {mid for mid in thread if self.messages[mid].timestamp < t_prime}

    def item_frequencies(self) -> dict[str, int]:
        """Number of distinct messages containing each item."""
        counts: Counter[str] = Counter()
        for items in self.message_items.values():
            counts.update(items)
        return dict(sorted(counts.items()))

    def to_records(self) -> Iterator[dict]:
        for msg in self.messages.values():
            yield msg.to_record()


def context(corpus: Corpus, message_id: str, t_prime: int) -> set[str]:
    return corpus.context(message_id, t_prime)


def _str_list(value, line: int, name: str) -> tuple[str, ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        raise CorpusParseError(line, f"field {name!r} must be a list")
    return tuple(str(v) for v in value)


def parse_record(rec: dict, line: int = 0) -> Message:
    if not isinstance(rec, dict):
        raise CorpusParseError(line, "record is not an object")
    for key in ("message_id", "thread_id", "timestamp"):
        if rec.get(key) in (None, ""):
            raise CorpusParseError(line, f"missing required field {key!r}")
    ts = rec["timestamp"]
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise CorpusParseError(line, "timestamp must be an integer")
    attachments = []
    for att in rec.get("attachments") or []:
        if not isinstance(att, dict) or not att.get("item_id"):
            raise CorpusParseError(line, "attachment without item_id")
        attachments.append((str(att["item_id"]), str(att.get("filename", ""))))
    return Message(
        message_id=str(rec["message_id"]),
        thread_id=str(rec["thread_id"]),
        timestamp=ts,
        sender=str(rec.get("from", "")),
        recipients=_str_list(rec.get("to"), line, "to"),
        sender_name=str(rec.get("from_name") or ""),
        recipient_names=_str_list(rec.get("to_names"), line, "to_names"),
        subject=str(rec.get("subject") or ""),
        body=str(rec.get("body") or ""),
        attachments=tuple(attachments),
    )


def parse_corpus(lines: Iterable[str]) -> Corpus:
    """Parse line-delimited JSON message records into a :class:`Corpus`."""
    messages = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(lineno, f"invalid JSON: {exc.msg}") from None
        msg = parse_record(rec, lineno)
        if msg.message_id in seen:
            raise CorpusParseError(lineno, f"duplicate message_id {msg.message_id!r}")
        seen.add(msg.message_id)
        messages.append(msg)
    return Corpus(messages)


def load_corpus(path: str | Path) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh)


def dump_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus.to_records():
            fh.write(dumps_json(rec))
            fh.write("\n")


def trim_item_outliers(corpus: Corpus, fraction: float = 0.05) -> set[str]:
    """Drop items in the bottom/top ``fraction`` of the frequency distribution.

    Boundaries are the linearly interpolated percentiles of the item
    frequencies; an item is removed only if it lies strictly outside them,
    so ties at a boundary survive.
    """
    freqs = corpus.item_frequencies()
    if not freqs:
        return set()
    values = np.array(list(freqs.values()), dtype=float)
    lo, hi = np.percentile(values, [100 * fraction, 100 * (1 - fraction)])
    return {iid for iid, f in freqs.items() if lo <= f <= hi}


@dataclass
class MiningResult:
    instances: list[Instance]
    item_bearing: int = 0
    no_thread_history: int = 0
    all_items_filtered: int = 0
    items_seen_in_thread: int = 0
    items_not_in_mailbox: int = 0
    drops: list[dict] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        return {
            "item_bearing_messages": self.item_bearing,
            "no_thread_history": self.no_thread_history,
            "all_items_filtered": self.all_items_filtered,
            "instances": len(self.instances),
            "items_seen_in_thread": self.items_seen_in_thread,
            "items_not_in_mailbox": self.items_not_in_mailbox,
        }


def mine_instances(corpus: Corpus, retained: set[str] | None = None) -> MiningResult:
    """Emit a request/reply instance for every message that carries retained items.

    The request is the message immediately preceding the reply in its thread.
    An item survives if it did not occur earlier in the thread and is present
    in the replier's mailbox strictly before the request's timestamp.
    """
    if retained is None:
        retained = set(corpus.items)
    result = MiningResult(instances=[])

    # first arrival of each item per mailbox
    first_seen: dict[tuple[str, str], int] = {}
    for iid, item in corpus.items.items():
        for mid, user in item.associations:
            ts = corpus[mid].timestamp
            key = (iid, user)
            if key not in first_seen or ts < first_seen[key]:
                first_seen[key] = ts

    for tid in sorted(corpus.threads):
        thread = corpus.threads[tid]
        earlier_items: set[str] = set()
        for pos, mid in enumerate(thread):
            items = [i for i in corpus.message_items[mid] if i in retained]
            if items:
                result.item_bearing += 1
                reply = corpus[mid]
                if pos == 0:
                    result.no_thread_history += 1
                    result.drops.append({"message_id": mid, "reason": "no_thread_history"})
                else:
                    request = corpus[thread[pos - 1]]
                    relevant = []
                    for iid in items:
                        if iid in earlier_items:
                            result.items_seen_in_thread += 1
                            continue
                        seen = first_seen.get((iid, reply.sender))
                        if seen is None or seen >= request.timestamp:
                            result.items_not_in_mailbox += 1
                            continue
                        relevant.append(iid)
                    if relevant:
                        result.instances.append(Instance(
                            instance_id=mid, thread_id=tid, request=request.message_id,
                            reply=mid, replier=reply.sender, t_prime=reply.timestamp,
                            relevant_items=tuple(sorted(relevant)),
                        ))
                    else:
                        result.all_items_filtered += 1
                        result.drops.append({"message_id": mid, "reason": "all_items_filtered"})
            earlier_items.update(corpus.message_items[mid])
    return result


def check_instance(corpus: Corpus, inst: Instance) -> list[str]:
    """Return the list of violated instance invariants (empty when valid)."""
    problems = []
    req, rep = corpus[inst.request], corpus[inst.reply]
    thread = corpus.threads[rep.thread_id]
    if req.thread_id != rep.thread_id or thread.index(req.message_id) >= thread.index(rep.message_id):
        problems.append("request does not precede reply in thread")
    if not inst.relevant_items:
        problems.append("empty relevant set")
    before = thread[:thread.index(rep.message_id)]
    for iid in inst.relevant_items:
        times = [corpus[mid].timestamp for mid, user in corpus.items[iid].associations
                 if user == inst.replier]
        if not times or min(times) >= inst.t_prime:
            problems.append(f"{iid} not in replier mailbox before t'")
        if any(iid in corpus.message_items[mid] for mid in before):
            problems.append(f"{iid} occurred earlier in thread")
    return problems


def temporal_split(instances: list[Instance], train_fraction: float) -> tuple[list[Instance], list[Instance]]:
    """Split instances by reply time; the earliest ``train_fraction`` go first."""
    ordered = sorted(instances, key=lambda i: (i.t_prime, i.instance_id))
    cut = int(round(train_fraction * len(ordered)))
    return ordered[:cut], ordered[cut:]
