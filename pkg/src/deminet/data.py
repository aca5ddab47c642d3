"""Behavior-log ingestion, temporal splitting, sample building, synthetic data.

IDs are mapped through a vocabulary to dense indices with 0 reserved for
padding. Training needs explicit negatives that click logs do not contain;
they are drawn uniformly from the item vocabulary excluding the user's full
history (one negative per positive by default). This protocol dominates
absolute metric values, so it is fixed here and documented in the README.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

SAMPLE_MAGIC = b"DMSAMP1"


@dataclass
class BehaviorLog:
    """Interaction records in file order; ids stay raw until encoding."""

    users: list
    items: list
    cats: list
    timestamps: np.ndarray
    events: list | None = None
    malformed: int = 0

    def __len__(self) -> int:
        return len(self.users)


@dataclass
class LogFormat:
    delimiter: str = "\t"
    click_events: frozenset | None = None   # None accepts every event type


@dataclass
class Sample:
    user: int
    items: np.ndarray        # encoded, time-ordered, most recent last
    cats: np.ndarray
    target_item: int
    target_cat: int
    label: int


class Vocab:
    """Bidirectional raw-id <-> dense-index maps; index 0 is padding."""

    def __init__(self):
        self.item_to_idx: dict = {}
        self.idx_to_item: list = [None]
        self.cat_to_idx: dict = {}
        self.idx_to_cat: list = [None]
        self.user_to_idx: dict = {}
        self.idx_to_user: list = [None]
        self.cat_of_item: list = [0]   # dense item idx -> dense cat idx (first seen)

    @property
    def num_items(self) -> int:
        return len(self.idx_to_item)

    @property
    def num_categories(self) -> int:
        return len(self.idx_to_cat)

    @property
    def num_users(self) -> int:
        return len(self.idx_to_user)

    def _intern(self, raw, fwd: dict, back: list) -> int:
        idx = fwd.get(raw)
        if idx is None:
            idx = len(back)
            fwd[raw] = idx
            back.append(raw)
        return idx

    def add_record(self, user, item, cat) -> tuple:
        u = self._intern(user, self.user_to_idx, self.idx_to_user)
        c = self._intern(cat, self.cat_to_idx, self.idx_to_cat)
        i = self._intern(item, self.item_to_idx, self.idx_to_item)
        if i == len(self.cat_of_item):
            self.cat_of_item.append(c)
        return u, i, c

    def decode_item(self, idx: int):
        return self.idx_to_item[idx]

    def decode_user(self, idx: int):
        return self.idx_to_user[idx]

    def decode_cat(self, idx: int):
        return self.idx_to_cat[idx]


def build_vocab(log: BehaviorLog) -> Vocab:
    vocab = Vocab()
    for u, i, c in zip(log.users, log.items, log.cats):
        vocab.add_record(u, i, c)
    return vocab


def parse_behavior_log(path, fmt: LogFormat | None = None) -> BehaviorLog:
    """Read a delimited text log: user, item, category, timestamp[, event].

    Malformed lines are counted; more than 1% of them is a hard error.
    Records whose event type is outside the configured click-equivalent set
    are dropped silently (they are valid lines, just not clicks).
    """
    fmt = fmt or LogFormat()
    users, items, cats, ts, events = [], [], [], [], []
    malformed = 0
    bad_samples = []
    total = 0
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read behavior log {path}: {exc}") from exc
    with fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            total += 1
            parts = line.split(fmt.delimiter)
            if len(parts) < 4:
                malformed += 1
                if len(bad_samples) < 5:
                    bad_samples.append(line[:120])
                continue
            try:
                t = float(parts[3])
            except ValueError:
                malformed += 1
                if len(bad_samples) < 5:
                    bad_samples.append(line[:120])
                continue
            event = parts[4] if len(parts) > 4 else None
            if fmt.click_events is not None and event is not None and event not in fmt.click_events:
                continue
            users.append(parts[0])
            items.append(parts[1])
            cats.append(parts[2])
            ts.append(t)
            events.append(event)
    if total and malformed / total > 0.01:
        raise DataError(
            f"{path}: {malformed}/{total} malformed lines (>1%); samples: {bad_samples}"
        )
    return BehaviorLog(
        users=users, items=items, cats=cats,
        timestamps=np.asarray(ts, dtype=np.float64),
        events=events, malformed=malformed,
    )


def temporal_split(log: BehaviorLog, fraction: float):
    """Split records at the ``fraction`` quantile timestamp.

    Records strictly before the split point train; the rest test. Returns
    (train, test, split_timestamp).
    """
    if not (0.0 < fraction < 1.0):
        raise ConfigError(f"split fraction must be in (0,1), got {fraction}")
    if len(log) == 0:
        raise DataError("cannot split an empty behavior log")
    ts_sorted = np.sort(log.timestamps)
    k = int(np.floor(fraction * len(log)))
    k = min(k, len(log) - 1)
    split_t = float(ts_sorted[k])
    train_mask = log.timestamps < split_t
    if not train_mask.any() or train_mask.all():
        raise DataError(
            f"degenerate temporal split at t={split_t}: "
            f"{int(train_mask.sum())} train / {int((~train_mask).sum())} test records"
        )

    def _take(mask):
        idx = np.nonzero(mask)[0]
        return BehaviorLog(
            users=[log.users[i] for i in idx],
            items=[log.items[i] for i in idx],
            cats=[log.cats[i] for i in idx],
            timestamps=log.timestamps[idx],
            events=[log.events[i] for i in idx] if log.events is not None else None,
        )

    return _take(train_mask), _take(~train_mask), split_t


def _user_sequences(log: BehaviorLog, vocab: Vocab) -> dict:
    """Encoded, time-sorted interaction list per user (stable for ties)."""
    per_user: dict = {}
    for pos, (u, i, c, t) in enumerate(zip(log.users, log.items, log.cats, log.timestamps)):
        ui = vocab.user_to_idx.get(u)
        ii = vocab.item_to_idx.get(i)
        ci = vocab.cat_to_idx.get(c)
        if ui is None or ii is None or ci is None:
            continue
        per_user.setdefault(ui, []).append((float(t), pos, ii, ci))
    for seq in per_user.values():
        seq.sort(key=lambda r: (r[0], r[1]))
    return per_user


def _draw_negative(rng: np.random.Generator, num_items: int, excluded: set) -> int:
    """Uniform item index outside ``excluded``; rejection first, complement if dense."""
    if num_items <= 1:
        raise ConfigError("empty item vocabulary")
    for _ in range(100):
        cand = int(rng.integers(1, num_items))
        if cand not in excluded:
            return cand
    pool = [i for i in range(1, num_items) if i not in excluded]
    if not pool:
        raise DataError("user history covers the whole item vocabulary; cannot sample a negative")
    return int(pool[rng.integers(0, len(pool))])


def _make_samples_for_user(user, history, start, full_exclusions, vocab, n_max,
                           neg_per_pos, rng, out):
    """Emit one positive plus negatives per target position >= start."""
    for r in range(start, len(history)):
        prefix = history[max(0, r - n_max): r]
        items = np.array([p[2] for p in prefix], dtype=np.int64)
        cats = np.array([p[3] for p in prefix], dtype=np.int64)
        _, _, tgt_item, tgt_cat = history[r]
        out.append(Sample(user, items, cats, tgt_item, tgt_cat, 1))
        for _ in range(neg_per_pos):
            neg = _draw_negative(rng, vocab.num_items, full_exclusions)
            out.append(Sample(user, items, cats, neg, vocab.cat_of_item[neg], 0))


def build_samples(log: BehaviorLog, vocab: Vocab, n_max: int, min_interactions: int,
                  neg_per_pos: int, rng: np.random.Generator) -> list:
    """Next-item training samples with uniform negatives.

    Users with fewer than ``min_interactions`` records are dropped. Each
    position r >= 1 yields a positive (prefix, item at r) and
    ``neg_per_pos`` negatives drawn outside the user's full history.
    """
    if min_interactions < 2:
        raise ConfigError(f"min_interactions must be >= 2, got {min_interactions}")
    per_user = _user_sequences(log, vocab)
    samples: list = []
    for user in sorted(per_user):
        history = per_user[user]
        if len(history) < min_interactions:
            continue
        exclusions = {rec[2] for rec in history}
        _make_samples_for_user(user, history, 1, exclusions, vocab, n_max,
                               neg_per_pos, rng, samples)
    return samples


def build_eval_samples(train_log: BehaviorLog, test_log: BehaviorLog, vocab: Vocab,
                       n_max: int, neg_per_pos: int, rng: np.random.Generator) -> list:
    """Evaluation samples from test-period targets.

    Cold-start users (no train-period interaction) are skipped. Each test
    interaction becomes a target whose history is everything the user did
    before it, train records plus earlier test records.
    """
    train_seqs = _user_sequences(train_log, vocab)
    test_seqs = _user_sequences(test_log, vocab)
    samples: list = []
    for user in sorted(test_seqs):
        train_hist = train_seqs.get(user)
        if not train_hist:
            continue
        history = list(train_hist) + list(test_seqs[user])
        exclusions = {rec[2] for rec in history}
        _make_samples_for_user(user, history, len(train_hist), exclusions, vocab,
                               n_max, neg_per_pos, rng, samples)
    return samples


# ---------------------------------------------------------------------------
# synthetic generator

_SYNTH_NUM_CATEGORIES = 17   # structurally unrelated to the cluster blocks


def synth_generate(num_users: int, num_items: int, num_interests: int, seq_len: int,
                   noise: float, rng: np.random.Generator):
    """Planted multi-interest click log.

    Items partition into ``num_interests`` contiguous cluster blocks; each
    user gets 2-3 latent clusters and draws every interaction from one of
    them with probability 1-noise, else uniformly from all items. Item
    categories cycle independently of the clusters, so the category id
    carries no direct cluster signal. Returns (log, ground_truth) where
    ground_truth maps users to clusters and items to their cluster.
    """
    if num_interests < 2:
        raise ConfigError(f"num_interests must be >= 2, got {num_interests}")
    if num_items < num_interests:
        raise ConfigError(f"need at least one item per cluster: {num_items} < {num_interests}")
    if not (0.0 <= noise <= 1.0):
        raise ConfigError(f"noise must be in [0,1], got {noise}")

    item_cluster = (np.arange(num_items) * num_interests) // num_items
    cluster_members = [np.nonzero(item_cluster == c)[0] for c in range(num_interests)]
    user_clusters = {}
    users, items, cats, ts = [], [], [], []
    for u in range(num_users):
        k = int(rng.integers(2, 4))
        clusters = rng.choice(num_interests, size=min(k, num_interests), replace=False)
        user_clusters[u] = sorted(int(c) for c in clusters)
        for t in range(seq_len):
            if rng.random() < noise:
                item = int(rng.integers(0, num_items))
            else:
                c = int(clusters[rng.integers(0, len(clusters))])
                members = cluster_members[c]
                item = int(members[rng.integers(0, len(members))])
            users.append(u)
            items.append(item)
            cats.append(item % _SYNTH_NUM_CATEGORIES)
            ts.append(float(t))
    log = BehaviorLog(users=users, items=items, cats=cats,
                      timestamps=np.asarray(ts, dtype=np.float64),
                      events=["click"] * len(users))
    ground_truth = {
        "user_clusters": user_clusters,
        "item_cluster": {int(i): int(c) for i, c in enumerate(item_cluster)},
    }
    return log, ground_truth


def write_log_tsv(log: BehaviorLog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for idx in range(len(log)):
            event = log.events[idx] if log.events is not None else "click"
            fh.write(f"{log.users[idx]}\t{log.items[idx]}\t{log.cats[idx]}"
                     f"\t{log.timestamps[idx]:g}\t{event}\n")


# ---------------------------------------------------------------------------
# binary sample stream

def write_samples(path, samples) -> None:
    """Length-prefixed binary record stream with a versioned header."""
    with open(path, "wb") as fh:
        fh.write(SAMPLE_MAGIC)
        for s in samples:
            n = len(s.items)
            payload = struct.pack("<IBIIH", s.user, s.label, s.target_item, s.target_cat, n)
            payload += s.items.astype("<u4").tobytes()
            payload += s.cats.astype("<u4").tobytes()
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)


def read_samples(path) -> list:
    with open(path, "rb") as fh:
        magic = fh.read(len(SAMPLE_MAGIC))
        if magic != SAMPLE_MAGIC:
            raise DataError(f"{path}: bad sample-stream magic {magic!r}")
        out = []
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) < 4:
                raise DataError(f"{path}: truncated record length")
            (size,) = struct.unpack("<I", head)
            payload = fh.read(size)
            if len(payload) != size:
                raise DataError(f"{path}: truncated record payload")
            user, label, tgt_item, tgt_cat, n = struct.unpack_from("<IBIIH", payload, 0)
            off = struct.calcsize("<IBIIH")
            items = np.frombuffer(payload, dtype="<u4", count=n, offset=off).astype(np.int64)
            cats = np.frombuffer(payload, dtype="<u4", count=n, offset=off + 4 * n).astype(np.int64)
            out.append(Sample(user, items, cats, tgt_item, tgt_cat, label))
    return out


def write_manifest(path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(entries):
            fh.write(f"{key}={entries[key]}\n")
