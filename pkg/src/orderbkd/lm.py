"""Perplexity scoring: a Kneser-Ney n-gram model and an external-scorer client.

The builtin model is an interpolated Kneser-Ney estimator with a single fixed
discount. Sentences are padded with ``order-1`` start symbols and one end
symbol, and every conditional distribution sums to one over the predictable
vocabulary (everything except ``<s>``), which makes the model exactly
checkable by enumeration on toy corpora.

The external scorer speaks newline-delimited JSON to a subprocess or TCP
peer, so a transformer language model can stand in for the builtin one
without changing any caller.
"""

from __future__ import annotations

import json
import math
import socket
import subprocess
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

PROTOCOL_NAME = "orderbkd-scorer"
PROTOCOL_VERSION = 1

# Vocabulary size up to which a dense conditional table is materialized,
# enabling the fast reposition-search kernel. order**vocab stays tiny here.
DENSE_TABLE_MAX_VOCAB = 40


class ScorerTransportError(Exception):
    """Connection, handshake, or protocol-framing failure of an external scorer."""


class ScorerRemoteError(Exception):
    """The external scorer answered a request with an error object."""


@dataclass
class LanguageModel:
    """Interpolated Kneser-Ney n-gram model over integer token ids."""

    order: int
    discount: float
    min_count: int
    vocab: dict[str, int]
    id_to_token: list[str]
    raw_counts: list[dict[tuple[int, ...], int]]  # raw_counts[k-1]: k-gram -> count

    # Derived at construction; see _finalize().
    _num: list[dict[tuple[int, ...], int]] = field(default_factory=list, repr=False)
    _den: list[dict[tuple[int, ...], int]] = field(default_factory=list, repr=False)
    _types: list[dict[tuple[int, ...], int]] = field(default_factory=list, repr=False)
    _cond_cache: dict[tuple[tuple[int, ...], int], float] = field(default_factory=dict, repr=False)
    _dense: "object | None" = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self._finalize()

    @property
    def bos_id(self) -> int:
        return self.vocab[BOS]

    @property
    def eos_id(self) -> int:
        return self.vocab[EOS]

    @property
    def unk_id(self) -> int:
        return self.vocab[UNK]

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def predictable_size(self) -> int:
        """Size of the outcome space: every vocab entry except ``<s>``."""
        return len(self.vocab) - 1

    def _finalize(self) -> None:
        """Build numerator/denominator/type tables for each interpolation level.

        The top level uses raw counts; every lower level k uses continuation
        counts, the number of distinct single-token left extensions of a
        (k+1)-gram observed in the padded corpus.
        """
        self._num = [dict() for _ in range(self.order)]
        self._den = [dict() for _ in range(self.order)]
        self._types = [dict() for _ in range(self.order)]
        self._num[self.order - 1] = self.raw_counts[self.order - 1]
        for k in range(self.order - 1, 0, -1):
            cont: dict[tuple[int, ...], int] = {}
            for gram in self.raw_counts[k]:  # (k+1)-grams
                suffix = gram[1:]
                cont[suffix] = cont.get(suffix, 0) + 1
            self._num[k - 1] = cont
        for k in range(1, self.order + 1):
            den = self._den[k - 1]
            types = self._types[k - 1]
            for gram, n in self._num[k - 1].items():
                ctx = gram[:-1]
                den[ctx] = den.get(ctx, 0) + n
                types[ctx] = types.get(ctx, 0) + 1
        self._cond_cache = {}
        self._dense = None

    def token_ids(self, tokens: Iterable[str]) -> list[int]:
        """Map tokens to ids, sending out-of-vocabulary tokens to ``<unk>``."""
        get = self.vocab.get
        unk = self.vocab[UNK]
        return [get(t, unk) for t in tokens]

    def cond_prob(self, context: tuple[int, ...], word: int) -> float:
        """P(word | context) with ``len(context) == order - 1``."""
        cached = self._cond_cache.get((context, word))
        if cached is not None:
            return cached
        p = self._prob(context, word, self.order)
        self._cond_cache[(context, word)] = p
        return p

    def _prob(self, context: tuple[int, ...], word: int, k: int) -> float:
        if k == 0:
            return 1.0 / self.predictable_size
        den = self._den[k - 1].get(context)
        if not den:
            return self._prob(context[1:], word, k - 1)
        n = self._num[k - 1].get(context + (word,), 0)
        lam = self.discount * self._types[k - 1][context]
        head = n - self.discount if n > 0 else 0.0
        return (head + lam * self._prob(context[1:], word, k - 1)) / den

    def logprob_ids(self, ids: Sequence[int]) -> float:
        """Chain-rule natural-log probability of ``ids`` plus the ``</s>`` step."""
        ctx = (self.vocab[BOS],) * (self.order - 1)
        total = 0.0
        for wid in ids:
            total += math.log(self.cond_prob(ctx, wid))
            if self.order > 1:
                ctx = ctx[1:] + (wid,)
        total += math.log(self.cond_prob(ctx, self.vocab[EOS]))
        return total

    def sequence_logprob(self, tokens: Sequence[str]) -> float:
        return self.logprob_ids(self.token_ids(tokens))

    def dense_tables(self):
        """Flat conditional log-prob table for small vocabularies, else ``None``.

        Index layout: ``table[ctx_index * V + word]`` where ``ctx_index`` is the
        base-V encoding of the ``order-1`` context ids. Built lazily and cached.
        """
        if self.vocab_size > DENSE_TABLE_MAX_VOCAB:
            return None
        if self._dense is None:
            import itertools

            import numpy as np

            v = self.vocab_size
            n_ctx = v ** (self.order - 1)
            table = np.empty(n_ctx * v, dtype=np.float64)
            for ci, ctx in enumerate(itertools.product(range(v), repeat=self.order - 1)):
                base = ci * v
                for w in range(v):
                    table[base + w] = math.log(self.cond_prob(ctx, w))
            self._dense = table
        return self._dense


def train_lm(
    corpus: Sequence[Sequence[str]],
    order: int = 3,
    min_count: int = 1,
    discount: float = 0.75,
) -> LanguageModel:
    """Train a Kneser-Ney model on tokenized sentences.

    Tokens occurring fewer than ``min_count`` times are replaced by ``<unk>``
    before counting, so any query stays finitely scoreable.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    if not 1 <= order <= 5:
        raise ValueError(f"order must be in [1, 5], got {order}")
    if not 0.0 < discount < 1.0:
        raise ValueError(f"discount must be in (0, 1), got {discount}")
    if min_count < 1:
        raise ValueError("min_count must be >= 1")

    freq = Counter()
    for sent in corpus:
        freq.update(sent)
    kept = sorted(t for t, c in freq.items() if c >= min_count and t not in (BOS, EOS, UNK))
    vocab = {BOS: 0, EOS: 1, UNK: 2}
    for tok in kept:
        vocab[tok] = len(vocab)
    id_to_token = [BOS, EOS, UNK] + kept

    unk = vocab[UNK]
    raw: list[dict[tuple[int, ...], int]] = [dict() for _ in range(order)]
    bos_pad = [vocab[BOS]] * (order - 1)
    for sent in corpus:
        ids = bos_pad + [vocab.get(t, unk) for t in sent] + [vocab[EOS]]
        # Every n-gram window ends at a predicted position (real token or </s>).
        for end in range(order - 1, len(ids)):
            for k in range(1, order + 1):
                gram = tuple(ids[end - k + 1 : end + 1])
                level = raw[k - 1]
                level[gram] = level.get(gram, 0) + 1
    return LanguageModel(
        order=order,
        discount=discount,
        min_count=min_count,
        vocab=vocab,
        id_to_token=id_to_token,
        raw_counts=raw,
    )


def save_lm(lm: LanguageModel, path: str | Path) -> None:
    """Write the model as versioned JSON (raw counts; derived tables rebuilt on load)."""
    payload = {
        "version": 1,
        "order": lm.order,
        "discount": lm.discount,
        "min_count": lm.min_count,
        "vocab": lm.id_to_token,
        "counts": [
            {" ".join(map(str, gram)): n for gram, n in sorted(level.items())}
            for level in lm.raw_counts
        ],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_lm(path: str | Path) -> LanguageModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("version") != 1:
        raise ValueError(f"{path}: unsupported language model file version {payload.get('version')!r}")
    id_to_token = list(payload["vocab"])
    raw = [
        {tuple(int(x) for x in key.split()): n for key, n in level.items()}
        for level in payload["counts"]
    ]
    return LanguageModel(
        order=int(payload["order"]),
        discount=float(payload["discount"]),
        min_count=int(payload["min_count"]),
        vocab={tok: i for i, tok in enumerate(id_to_token)},
        id_to_token=id_to_token,
        raw_counts=raw,
    )


class BuiltinScorer:
    """Scorer handle backed by an in-process :class:`LanguageModel`."""

    kind = "builtin"

    def __init__(self, lm: LanguageModel):
        self.lm = lm
        self._fast_state = None

    def fast_state(self):
        """Cached kernel parameters, or None when the vocabulary is too large.

        The last element caps sentence length so base-``v`` packed ids fit an
        int64 (see :mod:`orderbkd._fastpath`).
        """
        if self._fast_state is None:
            table = self.lm.dense_tables()
            if table is None:
                self._fast_state = False
            else:
                lm = self.lm
                max_len = min(15, int(63 // math.log2(max(2, lm.vocab_size))))
                self._fast_state = (
                    table, lm.vocab.get, lm.unk_id, lm.vocab_size,
                    lm.order, lm.bos_id, lm.eos_id, max_len,
                )
        return self._fast_state or None

    def sequence_logprob(self, tokens: Sequence[str]) -> float:
        return self.lm.sequence_logprob(tokens)

    def sequence_logprobs(self, batch: Sequence[Sequence[str]]) -> list[float]:
        return [self.lm.sequence_logprob(tokens) for tokens in batch]

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "order": self.lm.order,
            "discount": self.lm.discount,
            "min_count": self.lm.min_count,
            "vocab_size": self.lm.vocab_size,
        }

    def close(self) -> None:  # symmetry with ExternalScorer
        pass


class ExternalScorer:
    """Client for the newline-delimited JSON scorer protocol.

    One connection serializes its requests; responses may arrive out of order
    and are correlated by ``id``. The peer must greet with
    ``{"protocol": "orderbkd-scorer", "version": 1}`` (extra metadata keys are
    allowed and exposed as :attr:`handshake`).
    """

    kind = "external"

    def __init__(self, reader, writer, describe_extra: dict | None = None, proc=None, sock=None):
        self._reader = reader
        self._writer = writer
        self._proc = proc
        self._sock = sock
        self._next_id = 0
        self._pending: dict[int, dict] = {}
        self._extra = describe_extra or {}
        self.handshake = self._read_handshake()

    @classmethod
    def spawn(cls, command: Sequence[str]) -> "ExternalScorer":
        """Launch ``command`` as a subprocess and speak the protocol over stdio."""
        try:
            proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ScorerTransportError(f"failed to spawn scorer {command!r}: {exc}") from exc
        return cls(proc.stdout, proc.stdin, {"command": list(command)}, proc=proc)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 30.0) -> "ExternalScorer":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ScorerTransportError(f"failed to connect to scorer at {host}:{port}: {exc}") from exc
        reader = sock.makefile("r", encoding="utf-8", newline="\n")
        writer = sock.makefile("w", encoding="utf-8", newline="\n")
        return cls(reader, writer, {"address": f"{host}:{port}"}, sock=sock)

    def _read_handshake(self) -> dict:
        line = self._read_line()
        try:
            hello = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScorerTransportError(f"invalid handshake line: {line!r}") from exc
        if hello.get("protocol") != PROTOCOL_NAME or hello.get("version") != PROTOCOL_VERSION:
            raise ScorerTransportError(f"unexpected handshake: {hello!r}")
        return hello

    def _read_line(self) -> str:
        try:
            line = self._reader.readline()
        except OSError as exc:
            raise ScorerTransportError(f"read from scorer failed: {exc}") from exc
        if not line:
            raise ScorerTransportError("scorer closed the connection")
        return line

    def _send(self, obj: dict) -> None:
        try:
            self._writer.write(json.dumps(obj) + "\n")
            self._writer.flush()
        except (OSError, ValueError) as exc:
            raise ScorerTransportError(f"write to scorer failed: {exc}") from exc

    def _await(self, request_id: int) -> dict:
        while request_id not in self._pending:
            line = self._read_line()
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScorerTransportError(f"invalid response line: {line!r}") from exc
            if not isinstance(obj, dict) or "id" not in obj:
                raise ScorerTransportError(f"response without id: {obj!r}")
            self._pending[int(obj["id"])] = obj
        resp = self._pending.pop(request_id)
        if "error" in resp:
            raise ScorerRemoteError(str(resp["error"]))
        return resp

    def _request(self, op: str, **payload) -> dict:
        rid = self._next_id
        self._next_id += 1
        self._send({"id": rid, "op": op, **payload})
        return self._await(rid)

    def sequence_logprob(self, tokens: Sequence[str]) -> float:
        resp = self._request("logprob", tokens=list(tokens))
        if "logprob" not in resp:
            raise ScorerTransportError(f"logprob response missing field: {resp!r}")
        return float(resp["logprob"])

    def sequence_logprobs(self, batch: Sequence[Sequence[str]]) -> list[float]:
        ids = []
        for tokens in batch:
            rid = self._next_id
            self._next_id += 1
            self._send({"id": rid, "op": "logprob", "tokens": list(tokens)})
            ids.append(rid)
        out = []
        for rid in ids:
            resp = self._await(rid)
            if "logprob" not in resp:
                raise ScorerTransportError(f"logprob response missing field: {resp!r}")
            out.append(float(resp["logprob"]))
        return out

    def embed(self, text: str) -> list[float]:
        resp = self._request("embed", text=text)
        if "vector" not in resp:
            raise ScorerTransportError(f"embed response missing field: {resp!r}")
        return [float(x) for x in resp["vector"]]

    def describe(self) -> dict:
        return {"kind": self.kind, "handshake": self.handshake, **self._extra}

    def close(self) -> None:
        for stream in (self._writer, self._reader):
            try:
                stream.close()
            except OSError:
                pass
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        if self._proc is not None:
            try:
                self._proc.terminate()
                self._proc.wait(timeout=10)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()

    def __enter__(self) -> "ExternalScorer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


ScorerHandle = BuiltinScorer | ExternalScorer


def sequence_logprob(scorer: ScorerHandle, tokens: Sequence[str]) -> float:
    """Natural-log probability of ``tokens`` including the ``</s>`` transition."""
    return scorer.sequence_logprob(tokens)


def perplexity(scorer: ScorerHandle, tokens: Sequence[str]) -> float:
    """``exp(-logprob / m)`` with ``m`` = number of scored terms (tokens + </s>)."""
    m = len(tokens) + 1
    if m < 1:
        raise ValueError("nothing to score")
    return math.exp(-scorer.sequence_logprob(tokens) / m)


def perplexities(scorer: ScorerHandle, batch: Sequence[Sequence[str]]) -> list[float]:
    logprobs = scorer.sequence_logprobs(batch)
    return [math.exp(-lp / (len(tokens) + 1)) for tokens, lp in zip(batch, logprobs)]
