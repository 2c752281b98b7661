"""Four-branch city classifier over tweet features.

Branches: word-embedded tweet text and character-embedded profile location
(each a bidirectional LSTM whose per-step outputs [e_t; h_fwd; h_bwd] feed
self-attention for a weighted mean, concatenated with max-over-time pooling),
plus calendar-bucket encodings of tweet creation time and account creation
time. Branch outputs concatenate into a tanh fusion layer and a softmax over
the configured city labels.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .data import Prediction, TweetRecord
from .embeddings import CharVocab, WordVectorStore, tokenize
from .gazetteer import Gazetteer, place_within
from .tensor import Param, Tensor, no_grad

CHECKPOINT_VERSION = 1

ALL_FEATURES = ("text", "loc", "time", "acct")

# account-age year buckets: 2006 (the platform's first year) through 2006+19,
# clamped at both ends
ACCOUNT_BASE_YEAR = 2006
ACCOUNT_YEAR_BUCKETS = 20


class CheckpointError(ValueError):
    """A checkpoint file cannot be loaded against this code or config."""


@dataclass
class ModelConfig:
    num_classes: int
    word_dim: int = 300
    char_dim: int = 50
    rnn_hidden: int = 100
    time_feat_dim: int = 32
    acct_feat_dim: int = 32
    fusion_hidden: int = 400
    max_text_tokens: int = 64
    max_loc_chars: int = 32
    embeddings_trainable: bool = True
    features: tuple[str, ...] = ALL_FEATURES

    def __post_init__(self):
        self.features = tuple(self.features)
        dims = (self.word_dim, self.char_dim, self.rnn_hidden, self.time_feat_dim,
                self.acct_feat_dim, self.fusion_hidden, self.max_text_tokens,
                self.max_loc_chars)
        if any(d < 1 for d in dims):
            raise ValueError(f"all dimensions must be >= 1: {dims}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.features or any(f not in ALL_FEATURES for f in self.features):
            raise ValueError(f"features must be a nonempty subset of {ALL_FEATURES}, got {self.features}")

    @property
    def text_feat_dim(self) -> int:
        return 2 * (self.word_dim + 2 * self.rnn_hidden)

    @property
    def loc_feat_dim(self) -> int:
        return 2 * (self.char_dim + 2 * self.rnn_hidden)

    @property
    def fusion_in_dim(self) -> int:
        widths = {"text": self.text_feat_dim, "loc": self.loc_feat_dim,
                  "time": self.time_feat_dim, "acct": self.acct_feat_dim}
        return sum(widths[f] for f in self.features)


INIT_RANGE = 0.08


def time_buckets(dt) -> np.ndarray:
    """one-hot(hour of day, 24) followed by one-hot(day of week, 7)."""
    x = np.zeros(31)
    x[dt.hour] = 1.0
    x[24 + dt.weekday()] = 1.0
    return x


def account_buckets(dt) -> np.ndarray:
    """one-hot(creation year bucket, 20) followed by one-hot(month, 12)."""
    x = np.zeros(ACCOUNT_YEAR_BUCKETS + 12)
    year = min(max(dt.year - ACCOUNT_BASE_YEAR, 0), ACCOUNT_YEAR_BUCKETS - 1)
    x[year] = 1.0
    x[ACCOUNT_YEAR_BUCKETS + (dt.month - 1)] = 1.0
    return x


class GeoModel:
    """Model parameters plus the embedding store and char vocabulary.

    Parameters are immutable during inference and safe to share across
    threads; training mutates them from a single thread.
    """

    def __init__(self, config: ModelConfig, store: WordVectorStore,
                 cvocab: CharVocab | None = None, seed: int = 0,
                 _init: bool = True):
        if store.dim != config.word_dim:
            raise ValueError(f"store dim {store.dim} != config word_dim {config.word_dim}")
        self.config = config
        self.store = store
        self.cvocab = cvocab or CharVocab.default()
        self.params: dict[str, Param] = {}
        if _init:
            rng = np.random.default_rng(seed)
            for name, shape in self._param_shapes():
                self.params[name] = Param(rng.uniform(-INIT_RANGE, INIT_RANGE, shape))

    def _param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        cfg = self.config
        h = cfg.rnn_hidden
        shapes: list[tuple[str, tuple[int, ...]]] = []

        def rnn_branch(prefix: str, in_dim: int):
            for d in ("fwd", "bwd"):
                shapes.append((f"{prefix}.{d}.w_x", (in_dim, 4 * h)))
                shapes.append((f"{prefix}.{d}.w_h", (h, 4 * h)))
                shapes.append((f"{prefix}.{d}.b", (4 * h,)))
            r_dim = in_dim + 2 * h
            shapes.append((f"{prefix}.attn.w", (r_dim, h)))
            shapes.append((f"{prefix}.attn.b", (h,)))
            shapes.append((f"{prefix}.attn.v", (h,)))

        if "text" in cfg.features:
            rnn_branch("text", cfg.word_dim)
        if "loc" in cfg.features:
            shapes.append(("loc.chars", (len(self.cvocab), cfg.char_dim)))
            rnn_branch("loc", cfg.char_dim)
        if "time" in cfg.features:
            shapes.append(("time.w", (31, cfg.time_feat_dim)))
            shapes.append(("time.b", (cfg.time_feat_dim,)))
        if "acct" in cfg.features:
            shapes.append(("acct.w", (ACCOUNT_YEAR_BUCKETS + 12, cfg.acct_feat_dim)))
            shapes.append(("acct.b", (cfg.acct_feat_dim,)))
        shapes.append(("fusion.w", (cfg.fusion_in_dim, cfg.fusion_hidden)))
        shapes.append(("fusion.b", (cfg.fusion_hidden,)))
        shapes.append(("out.w", (cfg.fusion_hidden, cfg.num_classes)))
        shapes.append(("out.b", (cfg.num_classes,)))
        return shapes

    def named_params(self) -> list[tuple[str, Param]]:
        return list(self.params.items())

    def trainable_params(self) -> list[Param]:
        ps = [p for _, p in self.params.items()]
        if self.config.embeddings_trainable:
            ps.extend(p for _, p in self.store.params())
        return ps

    def zero_grads(self) -> None:
        for p in self.trainable_params():
            p.zero_grad()

    # -- encoders -------------------------------------------------------------

    def _encode_sequence(self, embedded: Tensor, prefix: str, out_dim: int) -> Tensor:
        """BiLSTM + attention-weighted mean + max-over-time over one sequence."""
        h = self.config.rnn_hidden
        seq_len = embedded.data.shape[0]
        p = self.params

        def run(direction: str, reverse: bool) -> Tensor:
            x_proj = T.add_rowvec(embedded @ p[f"{prefix}.{direction}.w_x"].value,
                                  p[f"{prefix}.{direction}.b"].value)
            w_h = p[f"{prefix}.{direction}.w_h"].value
            if not T.is_tracing():
                return Tensor(T.lstm_sequence(x_proj.data, w_h.data, reverse=reverse))
            order = range(seq_len - 1, -1, -1) if reverse else range(seq_len)
            states: list[Tensor | None] = [None] * seq_len
            hc = None
            for t in order:
                hc = T.lstm_step(x_proj, t, hc, w_h)
                states[t] = hc
            return T.stack_front_halves(states, h)

        r = T.hstack_cols([embedded, run("fwd", False), run("bwd", True)])
        scores = T.add_rowvec(r @ p[f"{prefix}.attn.w"].value,
                              p[f"{prefix}.attn.b"].value).tanh() @ p[f"{prefix}.attn.v"].value
        weights = scores.softmax()
        weighted_mean = weights @ r
        pooled = r.max_over_time()
        return T.concat([weighted_mean, pooled])

    def encode_text(self, tokens: list[str]) -> Tensor:
        """Encode a token sequence; empty input yields the zero vector."""
        cfg = self.config
        tokens = tokens[: cfg.max_text_tokens]
        if not tokens:
            return Tensor(np.zeros(cfg.text_feat_dim))
        if cfg.embeddings_trainable:
            embedded = T.stack_rows([self.store.param(w).value for w in tokens])
        else:
            embedded = Tensor(np.stack([self.store.lookup(w) for w in tokens]))
        return self._encode_sequence(embedded, "text", cfg.text_feat_dim)

    def encode_location(self, location: str) -> Tensor:
        """Encode a profile-location string character by character."""
        cfg = self.config
        chars = location[: cfg.max_loc_chars]
        if not chars:
            return Tensor(np.zeros(cfg.loc_feat_dim))
        embedded = T.gather_rows(self.params["loc.chars"].value, self.cvocab.ids(chars))
        return self._encode_sequence(embedded, "loc", cfg.loc_feat_dim)

    def encode_time(self, created_at) -> Tensor:
        x = Tensor(time_buckets(created_at))
        return (x @ self.params["time.w"].value + self.params["time.b"].value).tanh()

    def encode_account_age(self, account_created_at) -> Tensor:
        x = Tensor(account_buckets(account_created_at))
        return (x @ self.params["acct.w"].value + self.params["acct.b"].value).tanh()

    # -- forward --------------------------------------------------------------

    def forward(self, tweet: TweetRecord) -> Tensor:
        """Class distribution over the configured labels for one tweet."""
        cfg = self.config
        parts = []
        if "text" in cfg.features:
            parts.append(self.encode_text(tokenize(tweet.text)))
        if "loc" in cfg.features:
            parts.append(self.encode_location(tweet.user_location or ""))
        if "time" in cfg.features:
            parts.append(self.encode_time(tweet.created_at))
        if "acct" in cfg.features:
            parts.append(self.encode_account_age(tweet.user_created_at))
        z = T.concat(parts) if len(parts) > 1 else parts[0]
        hidden = (z @ self.params["fusion.w"].value + self.params["fusion.b"].value).tanh()
        logits = hidden @ self.params["out.w"].value + self.params["out.b"].value
        return logits.softmax()

    @staticmethod
    def predicted_label(distribution: np.ndarray) -> int:
        # argmax with smallest-index tie-break
        return int(np.argmax(distribution))

    def predict_batch(self, tweets: list[TweetRecord], g: Gazetteer,
                      seed: int = 0) -> tuple[list[Prediction | None], list[tuple[int, str]]]:
        """Per-tweet forward passes in input order, placed inside their city.

        Placement randomness derives from (seed, tweet id), so a tweet's
        placement is independent of its batch position. Per-tweet failures
        are recorded as (index, message) without aborting the batch; failed
        slots hold None.
        """
        if not tweets:
            raise ValueError("predict_batch requires at least one tweet")
        results: list[Prediction | None] = []
        errors: list[tuple[int, str]] = []
        with no_grad():
            for i, tweet in enumerate(tweets):
                try:
                    dist = self.forward(tweet).data
                    label = self.predicted_label(dist)
                    point = place_within(g, label, placement_rng(seed, tweet.id))
                    results.append(Prediction(
                        tweet_id=tweet.id, label_id=label, distribution=dist,
                        point=point, provenance="predicted"))
                except Exception as exc:
                    results.append(None)
                    errors.append((i, f"{type(exc).__name__}: {exc}"))
        return results, errors

    # -- checkpoint io ----------------------------------------------------------

    def save(self, path) -> None:
        doc = {
            "format_version": CHECKPOINT_VERSION,
            "config": {**asdict(self.config), "features": list(self.config.features),
                       "char_vocab": self.cvocab.chars},
            "params": {
                name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
                for name, p in self.params.items()
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)

    @classmethod
    def load_config(cls, path) -> ModelConfig:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls._parse_config(doc, path)

    @staticmethod
    def _parse_config(doc: dict, path) -> ModelConfig:
        if doc.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format_version {doc.get('format_version')!r}, "
                f"expected {CHECKPOINT_VERSION}")
        raw = dict(doc.get("config") or {})
        raw.pop("char_vocab", None)
        try:
            cfg = ModelConfig(**raw)
        except (TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: bad config: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path, store: WordVectorStore) -> "GeoModel":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        cfg = cls._parse_config(doc, path)
        cvocab = CharVocab((doc.get("config") or {}).get("char_vocab", "")) \
            if (doc.get("config") or {}).get("char_vocab") else CharVocab.default()
        model = cls(cfg, store, cvocab=cvocab, _init=False)
        expected = dict(model._param_shapes())
        saved = doc.get("params") or {}
        missing = sorted(set(expected) - set(saved))
        extra = sorted(set(saved) - set(expected))
        if missing or extra:
            raise CheckpointError(f"{path}: parameter names mismatch (missing {missing}, extra {extra})")
        for name, shape in expected.items():
            entry = saved[name]
            if tuple(entry["shape"]) != shape:
                raise CheckpointError(
                    f"{path}: {name} has shape {tuple(entry['shape'])}, expected {shape}")
            data = np.asarray(entry["data"], dtype=np.float64)
            if data.size != int(np.prod(shape)):
                raise CheckpointError(f"{path}: {name} holds {data.size} values, expected {np.prod(shape)}")
            model.params[name] = Param(data.reshape(shape))
        return model


def placement_rng(seed: int, tweet_id: str) -> random.Random:
    """Seeded generator for one tweet's placement, stable across batch order."""
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(tweet_id.encode("utf-8"), digest_size=8, key=key).digest()
    return random.Random(int.from_bytes(digest, "little"))
