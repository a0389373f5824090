"""Synthetic mailboxes with planted item signatures.

Every item gets its own signature terms.  The item first reaches its owner
in an "origin" message; later, colleagues ask the owner for it and the owner
replies with the item attached.  Signature terms appear in the subject and
body of every message in those threads and nowhere else, so a query made of
an item's signature terms retrieves that item first.  Bodies are padded
with Zipf-distributed filler terms that act as query-drift noise.
"""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass

from .corpus import Corpus, Message
from .text import noun_lexicon, stopwords, verb_lexicon

_FIRST_NAMES = (
    "alice", "bruno", "carla", "dmitri", "elena", "farid", "grace", "hiro", "ines", "jonas",
    "kemal", "lucia", "mateo", "nadia", "oscar", "priya", "quinn", "rosa", "samir", "tanja",
)
_LAST_NAMES = (
    "berg", "costa", "diaz", "evans", "fischer", "garcia", "hansen", "ito", "jensen", "klein",
)
_ONSETS = "b c d f g h j k l m n p r s t v w z br dr gr kl pl st tr".split()
_VOWELS = "a e i o u".split()
_CODAS = ["", "", "n", "r", "s", "l", "x"]
_REQUEST_PHRASES = (
    "could you send me the latest version",
    "do you have the file handy",
    "can you share the document again",
    "please forward what you have",
)


class SyntheticSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int = 8
    n_items: int = 40
    vocab_size: int = 500
    signature_terms: int = 2
    requests_per_item: int = 2
    filler_threads: int = 0
    subject_filler: int = 1
    body_length: tuple[int, int] = (12, 24)
    zipf_exponent: float = 1.0
    time_span: int = 10_000_000

    def to_dict(self) -> dict:
        d = asdict(self)
        d["body_length"] = list(self.body_length)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "body_length" in d:
            d["body_length"] = tuple(d["body_length"])
        return cls(**d)


def _pseudo_words(rng: random.Random, n: int, exclude: set[str]) -> list[str]:
    words: list[str] = []
    seen = set(exclude)
    while len(words) < n:
        syllables = rng.randint(2, 3)
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syllables)) + rng.choice(_CODAS)
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def generate_synthetic_corpus(spec: SyntheticSpec, seed: int = 0) -> Corpus:
    return Corpus(generate_messages(spec, seed)[0])


def generate_messages(spec: SyntheticSpec, seed: int = 0) -> tuple[list[Message], dict[str, list[str]]]:
    """Messages in time order plus the planted signature of every item."""
    if spec.n_users < 2:
        raise SyntheticSpecError("need at least two users")
    if min(spec.signature_terms, spec.requests_per_item + 1, spec.body_length[0]) < 1:
        raise SyntheticSpecError("signature_terms, body lengths must be positive")
    n_signature = spec.n_items * spec.signature_terms
    n_filler = spec.vocab_size - n_signature
    if n_filler < 10:
        raise SyntheticSpecError(
            f"vocabulary of {spec.vocab_size} cannot hold {n_signature} signature terms plus filler")

    rng = random.Random(seed)
    names = {_first for _first in _FIRST_NAMES} | set(_LAST_NAMES)
    reserved = set(stopwords()) | names | {"re"} | {w for p in _REQUEST_PHRASES for w in p.split()}
    real = sorted((noun_lexicon() | verb_lexicon()) - reserved)
    rng.shuffle(real)
    n_real = min(len(real), n_filler // 2)
    filler = real[:n_real] + _pseudo_words(rng, n_filler - n_real, reserved | set(real))
    signature_pool = _pseudo_words(rng, n_signature, reserved | set(real) | set(filler))
    rng.shuffle(filler)
    weights = [1.0 / (r + 1) ** spec.zipf_exponent for r in range(len(filler))]

    users = [f"u{i:02d}@example.com" for i in range(spec.n_users)]
    display = {u: f"{_FIRST_NAMES[i % len(_FIRST_NAMES)]} {_LAST_NAMES[i % len(_LAST_NAMES)]}"
               for i, u in enumerate(users)}

    def first(u):
        return display[u].split()[0]

    def noise(n):
        return rng.choices(filler, weights=weights, k=n)

    def body_with(terms, greeting_to, signer, extra=""):
        n = rng.randint(*spec.body_length)
        words = noise(n)
        for t in terms:
            words.insert(rng.randrange(len(words) + 1), t)
        text = " ".join(words)
        if extra:
            text = f"{text}. {extra}"
        return f"hi {first(greeting_to)}, {text}. {first(signer)}"

    def subject_with(terms):
        words = list(terms) + noise(spec.subject_filler)
        rng.shuffle(words)
        return " ".join(words)

    messages: list[Message] = []
    signatures: dict[str, list[str]] = {}
    counter = 0

    def make(thread, ts, sender, recipients, subject, body, attachments=()):
        nonlocal counter
        counter += 1
        msg = Message(
            message_id=f"m{counter:05d}", thread_id=thread, timestamp=ts, sender=sender,
            recipients=tuple(recipients), sender_name=display[sender],
            recipient_names=tuple(display[r] for r in recipients),
            subject=subject, body=body, attachments=tuple(attachments),
        )
        messages.append(msg)
        return msg

    half = spec.time_span // 2
    for i in range(spec.n_items):
        sig = signature_pool[i * spec.signature_terms:(i + 1) * spec.signature_terms]
        item = (f"item-{i:03d}", f"{sig[0]}_{i:03d}.pdf")
        signatures[item[0]] = list(sig)
        owner = rng.choice(users)
        origin_sender = rng.choice([u for u in users if u != owner])
        t0 = rng.randrange(1, half)
        make(f"t{i:03d}-o", t0, origin_sender, [owner], subject_with(sig),
             body_with(sig, owner, origin_sender), [item])
        for r in range(spec.requests_per_item):
            asker = rng.choice([u for u in users if u != owner])
            t_req = rng.randrange(t0 + 1, spec.time_span)
            subject = subject_with(sig)
            make(f"t{i:03d}-r{r}", t_req, asker, [owner], subject,
                 body_with(sig, owner, asker, rng.choice(_REQUEST_PHRASES)))
            make(f"t{i:03d}-r{r}", t_req + rng.randint(1, 5000), owner, [asker], f"re {subject}",
                 body_with(sig, asker, owner), [item])
    for j in range(spec.filler_threads):
        a, b = rng.sample(users, 2)
        ts = rng.randrange(1, spec.time_span)
        make(f"f{j:03d}", ts, a, [b], " ".join(noise(3)), body_with([], b, a))

    messages.sort(key=lambda m: (m.timestamp, m.message_id))
    return messages, signatures
