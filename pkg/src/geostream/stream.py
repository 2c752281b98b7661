"""Real-time prediction pipeline: read NDJSON tweets, batch, predict, place.

Geotagged tweets bypass the model and pass straight through; tweets with a
profile location but no geotag buffer until the batch size is reached or the
flush interval elapses since the oldest buffered tweet, then get predicted
and placed inside their predicted city. The clock is injectable: tests drive
a virtual clock for byte-identical replays, production uses the wall clock
with a bounded-queue reader thread so timeout flushes fire while the source
is idle.
"""

from __future__ import annotations

import contextlib
import os
import queue
import signal
import sys
import threading
import time
from dataclasses import dataclass, field

from .data import Prediction, TweetParseError, is_predictable, parse_tweet, serialize_prediction
from .embeddings import WordVectorStore, load_word_vectors
from .gazetteer import BBox, Gazetteer, label_of, load_gazetteer
from .metrics import RegionCounter
from .model import GeoModel


class Clock:
    """Wall clock with real waiting."""

    def now(self) -> float:
        return time.monotonic()

    def wait(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class VirtualClock(Clock):
    """Deterministic clock: waiting advances time instantly."""

    def __init__(self, start: float = 0.0):
        self._t = start

    def now(self) -> float:
        return self._t

    def wait(self, seconds: float) -> None:
        if seconds > 0:
            self._t += seconds


@dataclass
class PipelineConfig:
    checkpoint: str
    gazetteer: str
    vectors: str | None = None
    vector_seed: int = 0
    batch_size: int = 512
    flush_interval: float = 60.0
    source: str = "-"  # "-" means standard input
    sink: str = "-"  # "-" means standard output
    seed: int = 0
    rate: float | None = None  # tweets per minute; None = unpaced
    regions: dict[str, BBox] = field(default_factory=dict)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.flush_interval <= 0:
            raise ValueError(f"flush_interval must be > 0, got {self.flush_interval}")
        if self.rate is not None and self.rate <= 0:
            raise ValueError(f"rate must be > 0, got {self.rate}")


@dataclass
class PipelineCounters:
    lines_in: int = 0
    parse_errors: int = 0
    geotagged_passthrough: int = 0
    predictable_buffered: int = 0
    dropped: int = 0
    batches_flushed: int = 0
    predictions_out: int = 0
    predict_errors: int = 0
    regions: dict[str, RegionCounter] = field(default_factory=dict)

    def consistent(self) -> bool:
        routed = (self.parse_errors + self.geotagged_passthrough
                  + self.predictable_buffered + self.dropped)
        return self.lines_in == routed

    def lines(self) -> list[str]:
        out = [
            f"lines_in={self.lines_in}",
            f"parse_errors={self.parse_errors}",
            f"geotagged_passthrough={self.geotagged_passthrough}",
            f"predictable_buffered={self.predictable_buffered}",
            f"dropped={self.dropped}",
            f"batches_flushed={self.batches_flushed}",
            f"predictions_out={self.predictions_out}",
            f"predict_errors={self.predict_errors}",
        ]
        for name, counter in self.regions.items():
            s = counter.stats()
            pct = s.percent_increase
            out.append(f"region.{name}.geotagged={s.n_geotagged}")
            out.append(f"region.{name}.predicted={s.n_predicted}")
            out.append(f"region.{name}.percent_increase="
                       f"{'' if pct is None else format(pct, '.2f')}")
        return out


class _Engine:
    """Single-consumer pipeline core: routing, buffering, flushing, emission.

    All ordering decisions happen here, on one thread, so output is a pure
    function of (input order, checkpoint, seed, config).
    """

    def __init__(self, cfg: PipelineConfig, model: GeoModel, gaz: Gazetteer,
                 clock: Clock, sink):
        self.cfg = cfg
        self.model = model
        self.gaz = gaz
        self.clock = clock
        self.sink = sink
        self.counters = PipelineCounters(
            regions={name: RegionCounter(bbox) for name, bbox in cfg.regions.items()})
        self.buffer = []
        self.deadline: float | None = None

    def offer(self, line: str) -> None:
        self.counters.lines_in += 1
        if not line.strip():
            self.counters.parse_errors += 1
            return
        try:
            rec = parse_tweet(line)
        except TweetParseError:
            self.counters.parse_errors += 1
            return
        if rec.geotag is not None:
            self.counters.geotagged_passthrough += 1
            label = label_of(self.gaz, rec.geotag)
            self._emit(Prediction(tweet_id=rec.id, label_id=label, distribution=None,
                                  point=rec.geotag, provenance="geotagged"))
        elif is_predictable(rec):
            self.counters.predictable_buffered += 1
            if not self.buffer:
                self.deadline = self.clock.now() + self.cfg.flush_interval
            self.buffer.append(rec)
            if len(self.buffer) >= self.cfg.batch_size:
                self.flush()
        else:
            self.counters.dropped += 1

    def check_timeout(self) -> None:
        if self.buffer and self.deadline is not None and self.clock.now() >= self.deadline:
            self.flush()

    def flush(self) -> None:
        if not self.buffer:
            return
        batch, self.buffer, self.deadline = self.buffer, [], None
        predictions, errors = self.model.predict_batch(batch, self.gaz, seed=self.cfg.seed)
        self.counters.batches_flushed += 1
        self.counters.predict_errors += len(errors)
        for pred in predictions:
            if pred is not None:
                self._emit(pred)

    def _emit(self, pred: Prediction) -> None:
        name = self.gaz[pred.label_id].name if pred.label_id is not None else None
        self.sink.write(serialize_prediction(pred, name) + "\n")
        self.counters.predictions_out += 1
        for counter in self.counters.regions.values():
            counter.add(pred.point, pred.provenance)

    def finish(self) -> PipelineCounters:
        self.flush()
        self.sink.flush()
        return self.counters


def _paced(lines, rate: float, clock: Clock):
    """Deliver lines at a fixed rate (per minute) against the clock."""
    interval = 60.0 / rate
    start = clock.now()
    for i, line in enumerate(lines):
        target = start + i * interval
        clock.wait(target - clock.now())
        yield line


_SENTINEL = object()


def _reader_thread(lines, q: queue.Queue):
    try:
        for line in lines:
            q.put(line)  # blocks when full: back-pressure on the reader
    finally:
        q.put(_SENTINEL)


def _drive_direct(engine: _Engine, lines) -> None:
    for line in lines:
        engine.check_timeout()
        engine.offer(line)


def _drive_queued(engine: _Engine, lines, capacity: int) -> None:
    """Reader thread + bounded queue; the consumer times out to flush."""
    q: queue.Queue = queue.Queue(maxsize=capacity)
    t = threading.Thread(target=_reader_thread, args=(lines, q), daemon=True)
    t.start()
    while True:
        timeout = None
        if engine.buffer and engine.deadline is not None:
            timeout = max(0.0, engine.deadline - engine.clock.now())
        try:
            item = q.get(timeout=timeout)
        except queue.Empty:
            engine.check_timeout()
            continue
        if item is _SENTINEL:
            break
        engine.check_timeout()
        engine.offer(item)
    t.join()


@contextlib.contextmanager
def _open_lines(source: str):
    if source == "-":
        yield sys.stdin
    else:
        with open(source, encoding="utf-8") as fh:
            yield fh


@contextlib.contextmanager
def _open_sink(sink: str):
    if sink == "-":
        yield sys.stdout
    else:
        with open(sink, "w", encoding="utf-8") as fh:
            yield fh


def load_resources(cfg: PipelineConfig) -> tuple[GeoModel, Gazetteer]:
    """Load gazetteer, word vectors, and checkpoint; failures raise."""
    gaz = load_gazetteer(cfg.gazetteer)
    model_cfg = GeoModel.load_config(cfg.checkpoint)
    if cfg.vectors:
        store = load_word_vectors(cfg.vectors, seed=cfg.vector_seed,
                                  trainable=model_cfg.embeddings_trainable)
    else:
        store = WordVectorStore(model_cfg.word_dim, seed=cfg.vector_seed,
                                trainable=model_cfg.embeddings_trainable)
    model = GeoModel.load(cfg.checkpoint, store)
    if len(gaz) != model_cfg.num_classes:
        raise ValueError(f"gazetteer has {len(gaz)} cities but the model predicts "
                         f"{model_cfg.num_classes} classes")
    return model, gaz


def run_pipeline(cfg: PipelineConfig, clock: Clock | None = None,
                 lines=None, counter_sink=None) -> PipelineCounters:
    """Run the pipeline until the source drains; returns final counters.

    ``lines`` may inject any iterable of NDJSON lines (tests); otherwise the
    configured source is opened. With a wall clock the source is consumed
    through a reader thread and bounded queue (capacity 2 * batch_size) so a
    quiet source still honors the flush timeout; with a virtual clock the
    loop is a deterministic single thread.
    """
    clock = clock or Clock()
    model, gaz = load_resources(cfg)
    with contextlib.ExitStack() as stack:
        if lines is None:
            lines = stack.enter_context(_open_lines(cfg.source))
        sink = stack.enter_context(_open_sink(cfg.sink))
        engine = _Engine(cfg, model, gaz, clock, sink)
        feed = (line for line in lines)
        if cfg.rate is not None:
            feed = _paced(feed, cfg.rate, clock)
        restore_signal = _install_counter_dump(engine, counter_sink)
        try:
            if isinstance(clock, VirtualClock):
                _drive_direct(engine, feed)
            else:
                _drive_queued(engine, feed, capacity=2 * cfg.batch_size)
            counters = engine.finish()
        finally:
            restore_signal()
        if counter_sink is not None:
            for line in counters.lines():
                counter_sink.write(line + "\n")
    return counters


def replay_rate(cfg: PipelineConfig, rate: float, clock: Clock | None = None,
                lines=None, counter_sink=None) -> PipelineCounters:
    """run_pipeline with source lines delivered at ``rate`` tweets/minute."""
    if rate <= 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    paced_cfg = PipelineConfig(**{**cfg.__dict__, "rate": rate})
    return run_pipeline(paced_cfg, clock=clock, lines=lines, counter_sink=counter_sink)


def _install_counter_dump(engine: _Engine, counter_sink):
    """SIGUSR1 dumps live counters where the platform supports it."""
    if (counter_sink is None or threading.current_thread() is not threading.main_thread()
            or not hasattr(signal, "SIGUSR1")):
        return lambda: None

    def handler(signum, frame):
        for line in engine.counters.lines():
            counter_sink.write(line + "\n")

    try:
        previous = signal.signal(signal.SIGUSR1, handler)
    except (ValueError, OSError):
        return lambda: None
    return lambda: signal.signal(signal.SIGUSR1, previous)


# -- flat key=value config files -----------------------------------------------

_INT_KEYS = {"batch_size", "seed", "vector_seed"}
_FLOAT_KEYS = {"flush_interval", "rate"}


def parse_config_file(path) -> dict:
    """Flat ``key=value`` lines; ``region.<name>=minlat,maxlat,minlon,maxlon``
    rows collect into the regions mapping. '#' starts a comment."""
    values: dict = {}
    regions: dict[str, BBox] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path} line {lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key.startswith("region."):
                parts = [float(v) for v in value.split(",")]
                if len(parts) != 4:
                    raise ValueError(f"{path} line {lineno}: region needs 4 comma-separated values")
                regions[key[len("region."):]] = tuple(parts)  # type: ignore[assignment]
            else:
                values[key] = value
    if regions:
        values["regions"] = regions
    return values


def apply_env(values: dict, environ=None, prefix: str = "GEOSTREAM_") -> dict:
    """Overlay ``GEOSTREAM_<FIELD>`` environment variables onto config values."""
    environ = os.environ if environ is None else environ
    out = dict(values)
    for fld in ("checkpoint", "gazetteer", "vectors", "vector_seed", "batch_size",
                "flush_interval", "source", "sink", "seed", "rate"):
        env_key = prefix + fld.upper()
        if env_key in environ:
            out[fld] = environ[env_key]
    return out


def coerce_config(values: dict) -> dict:
    out = dict(values)
    for key in _INT_KEYS & out.keys():
        out[key] = int(out[key])
    for key in _FLOAT_KEYS & out.keys():
        if out[key] is not None:
            out[key] = float(out[key])
    return out
