"""
Agreement between automatic phase events and reader annotations.

Frame differences are binned into DF0..DF3, an overflow bucket (> 3) and an
unmatched bucket; the headline figure is the share of reference events
recovered within one frame.
"""

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field

from .trajectory_phase import ED, ES

log = logging.getLogger(__name__)

PHASES = (ED, ES)
MAX_BUCKET = 3


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Annotation:
    source_id: str
    phase: str
    frame: int
    reader: str


class AnnotationSet:
    def __init__(self, entries=()):
        self.entries = []
        for e in entries:
            self.add(e)

    def add(self, entry):
        if not isinstance(entry, Annotation):
            entry = Annotation(*entry)
        phase = entry.phase.strip().upper()
        if phase not in PHASES:
            raise EvaluationError(f"phase must be ED or ES, got {entry.phase!r}")
        if entry.frame < 0:
            raise EvaluationError(f"negative frame index {entry.frame}")
        self.entries.append(Annotation(entry.source_id, phase, int(entry.frame), entry.reader))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def readers(self):
        return sorted({e.reader for e in self.entries})

    @property
    def sources(self):
        return sorted({e.source_id for e in self.entries})

    def for_reader(self, reader):
        return AnnotationSet(e for e in self.entries if e.reader == reader)

    def frames(self, source_id, phase):
        return sorted(e.frame for e in self.entries
                      if e.source_id == source_id and e.phase == phase)

    @classmethod
    def read_csv(cls, path):
        out = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"source_id", "phase", "frame", "reader"} - set(reader.fieldnames or ())
            if missing:
                raise EvaluationError(f"{path}: missing columns {sorted(missing)}")
            for row in reader:
                out.add(Annotation(row["source_id"], row["phase"], int(row["frame"]),
                                   row["reader"]))
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["source_id", "phase", "frame", "reader"])
            for e in self.entries:
                w.writerow([e.source_id, e.phase, e.frame, e.reader])


def match_events(auto, ref):
    """Pair each reference frame with the nearest unused automatic frame.

    References are visited in ascending order; equidistant candidates go to
    the earlier automatic frame.  Returns ``(pairs, unmatched)`` where pairs
    are ``(ref_frame, auto_frame)``.
    """
    remaining = sorted(_frame(a) for a in auto)
    pairs, unmatched = [], []
    for r in sorted(_frame(e) for e in ref):
        if not remaining:
            unmatched.append(r)
            continue
        best = min(range(len(remaining)), key=lambda i: (abs(remaining[i] - r), remaining[i]))
        pairs.append((r, remaining.pop(best)))
    return pairs, unmatched


def _frame(e):
    return e if isinstance(e, int) else int(getattr(e, "frame", e))


@dataclass
class DiffHistogram:
    df: list = field(default_factory=lambda: [0] * (MAX_BUCKET + 1))
    overflow: int = 0
    unmatched: int = 0

    @property
    def total(self):
        return sum(self.df) + self.overflow + self.unmatched

    def __add__(self, other):
        return DiffHistogram([a + b for a, b in zip(self.df, other.df)],
                             self.overflow + other.overflow,
                             self.unmatched + other.unmatched)

    @classmethod
    def from_counts(cls, df0, df1, df2, df3, overflow=0, unmatched=0):
        return cls([df0, df1, df2, df3], overflow, unmatched)

    def percentages(self):
        t = self.total
        return [100.0 * c / t if t else 0.0 for c in self.df]


def diff_histogram(pairs, unmatched=()):
    """Bucket |auto - ref| of each pair; ``pairs`` may also be bare differences."""
    h = DiffHistogram()
    for p in pairs:
        diff = abs(p[0] - p[1]) if isinstance(p, tuple) else abs(int(p))
        if diff <= MAX_BUCKET:
            h.df[diff] += 1
        else:
            h.overflow += 1
    h.unmatched = len(list(unmatched))
    return h


def within_k_rate(hist, k=1):
    """Percentage of reference events within ``k`` frames (unrounded)."""
    if not 0 <= k <= MAX_BUCKET:
        raise EvaluationError(f"k must be in 0..{MAX_BUCKET}, got {k}")
    if hist.total == 0:
        raise EvaluationError("within-k rate undefined for an empty histogram")
    return 100.0 * sum(hist.df[:k + 1]) / hist.total


def format_rate(rate):
    return f"{rate:.2f}%"


@dataclass
class AgreementReport:
    per_phase: dict
    k: int = 1
    warnings: list = field(default_factory=list)

    @property
    def overall(self):
        return self.per_phase[ED] + self.per_phase[ES]

    def rate(self, phase=None):
        h = self.overall if phase is None else self.per_phase[phase]
        return within_k_rate(h, self.k)

    def rows(self):
        for label, h in ((ED, self.per_phase[ED]), (ES, self.per_phase[ES]),
                         ("Overall", self.overall)):
            yield label, h

    def to_text(self, title=""):
        lines = [title] if title else []
        lines.append(_table_header("Phase"))
        for label, h in self.rows():
            rate = format_rate(within_k_rate(h, self.k)) if h.total else "n/a"
            lines.append(_table_row(label, h) + f"  within-{self.k}: {rate}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["phase", "df0", "df1", "df2", "df3", "overflow", "unmatched",
                        "total", f"within_{self.k}_pct"])
            for label, h in self.rows():
                rate = f"{within_k_rate(h, self.k):.2f}" if h.total else ""
                w.writerow([label, *h.df, h.overflow, h.unmatched, h.total, rate])


def _cell(count, total):
    pct = 100.0 * count / total if total else 0.0
    return f"{count}({pct:.2f}%)"


def _table_header(label):
    cols = [f"DF{k}" for k in range(MAX_BUCKET + 1)] + [">3", "unmatched"]
    return f"{label:<10}" + "".join(f"{c:>14}" for c in cols)


def _table_row(label, h):
    cells = [_cell(c, h.total) for c in h.df] + [_cell(h.overflow, h.total),
                                                _cell(h.unmatched, h.total)]
    return f"{label:<10}" + "".join(f"{c:>14}" for c in cells)


def agreement(auto_events, ref, k=1, reader=None):
    """Compare automatic events against reference annotations.

    ``auto_events`` maps source_id to ``{"ED": [frames], "ES": [frames]}``.
    Only sources present on both sides are compared; the rest are listed in
    the warnings.
    """
    if reader is not None:
        ref = ref.for_reader(reader)
    ref_sources = set(ref.sources)
    auto_sources = set(auto_events)
    warnings = []
    for s in sorted(auto_sources - ref_sources):
        warnings.append(f"automatic report {s!r} has no reference annotations")
    for s in sorted(ref_sources - auto_sources):
        warnings.append(f"reference video {s!r} has no automatic report")
    per_phase = {p: DiffHistogram() for p in PHASES}
    for s in sorted(auto_sources & ref_sources):
        for p in PHASES:
            pairs, unmatched = match_events(auto_events[s].get(p, []), ref.frames(s, p))
            per_phase[p] = per_phase[p] + diff_histogram(pairs, unmatched)
    for w in warnings:
        log.warning(w)
    return AgreementReport(per_phase, k, warnings)


@dataclass
class ReaderDelta:
    per_source: dict
    histograms: dict
    totals: dict
    averages: dict
    warnings: list = field(default_factory=list)

    def to_text(self):
        width = max([max(h) for h in self.histograms.values() if h] + [0])
        lines = [f"{'Difference':<12}{'ED':>8}{'ES':>8}"]
        for diff in range(width + 1):
            lines.append(f"{diff:<12}" + "".join(
                f"{self.histograms[p].get(diff, 0):>8}" for p in PHASES))
        lines.append(f"{'Total':<12}" + "".join(f"{self.totals[p]:>8}" for p in PHASES))
        n = len(self.per_source)
        lines.append(f"{'Average':<12}" + "".join(
            f"{self.averages[p]:>8.2f}" for p in PHASES) + f"   (over {n} videos)")
        return "\n".join(lines) + "\n"


def reader_delta(reader_a, reader_b):
    """Per-video absolute frame difference between two readers.

    Each video's difference for a phase is the summed |a - b| over its
    paired events; the average divides the total by the number of videos
    annotated by both readers.
    """
    sa, sb = set(reader_a.sources), set(reader_b.sources)
    warnings = [f"video {s!r} annotated by only one reader; excluded"
                for s in sorted(sa ^ sb)]
    common = sorted(sa & sb)
    per_source = {}
    histograms = {p: defaultdict(int) for p in PHASES}
    totals = {p: 0 for p in PHASES}
    for s in common:
        row = {}
        for p in PHASES:
            pairs, unmatched = match_events(reader_b.frames(s, p), reader_a.frames(s, p))
            if unmatched:
                warnings.append(f"video {s!r}: {len(unmatched)} {p} events without a partner")
            diff = sum(abs(r - a) for r, a in pairs)
            row[p] = diff
            histograms[p][diff] += 1
            totals[p] += diff
        per_source[s] = row
    n = len(common)
    averages = {p: totals[p] / n if n else 0.0 for p in PHASES}
    for w in warnings:
        log.warning(w)
    return ReaderDelta(per_source, {p: dict(h) for p, h in histograms.items()},
                       totals, averages, warnings)


@dataclass
class SweepRow:
    threshold: float
    histogram: DiffHistogram
    key_point_counts: dict
    failures: dict = field(default_factory=dict)


@dataclass
class SweepReport:
    rows: list

    def to_text(self):
        lines = [_table_header("Threshold")]
        for r in self.rows:
            lines.append(_table_row(f"{r.threshold:g}", r.histogram))
        for r in self.rows:
            for s, msg in sorted(r.failures.items()):
                lines.append(f"threshold {r.threshold:g}: {s} failed: {msg}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "df0", "df1", "df2", "df3", "overflow", "unmatched",
                        "df0_pct", "df1_pct", "df2_pct", "df3_pct", "failed_videos"])
            for r in self.rows:
                h = r.histogram
                w.writerow([f"{r.threshold:g}", *h.df, h.overflow, h.unmatched,
                            *(f"{p:.2f}" for p in h.percentages()), len(r.failures)])

    def count_monotone(self):
        """True when key-point counts never rise with the threshold, per video."""
        ordered = sorted(self.rows, key=lambda r: r.threshold)
        for a, b in zip(ordered, ordered[1:]):
            for s, n in b.key_point_counts.items():
                if s in a.key_point_counts and n > a.key_point_counts[s]:
                    return False
        return True


def threshold_sweep(videos, ref, thresholds, detector=None, flow=None, phase=None,
                    reader=None):
    """Rerun the pipeline per detection threshold and histogram the agreement.

    ``videos`` is a list of ``(FrameSequence, Roi)``.  Failed videos are
    recorded per threshold, and their reference events count as unmatched.
    """
    from dataclasses import replace

    from .corners import DetectorConfig
    from .pipeline import run_pipeline
    from .pyramid_flow import FlowConfig
    from .trajectory_phase import PhaseConfig

    thresholds = list(thresholds)
    if not thresholds:
        raise EvaluationError("threshold list is empty")
    for t in thresholds:
        if not 0.0 < t <= 1.0:
            raise EvaluationError(f"threshold {t} outside (0, 1]")
    detector = detector or DetectorConfig()
    flow = flow or FlowConfig()
    phase = phase or PhaseConfig()
    if reader is not None:
        ref = ref.for_reader(reader)

    rows = []
    for t in thresholds:
        cfg = replace(detector, quality_threshold=t)
        auto, counts, failures = {}, {}, {}
        for seq, roi in sorted(videos, key=lambda v: v[0].source_id):
            try:
                res = run_pipeline(seq, roi, cfg, flow, phase)
            except ValueError as exc:
                failures[seq.source_id] = str(exc)
                auto[seq.source_id] = {ED: [], ES: []}
                continue
            counts[seq.source_id] = len(res.key_points)
            auto[seq.source_id] = {ED: res.report.ed_frames, ES: res.report.es_frames}
        rep = agreement(auto, ref)
        rows.append(SweepRow(t, rep.overall, counts, failures))
    return SweepReport(rows)
