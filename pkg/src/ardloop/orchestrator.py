"""The self-training loop: fit, estimate labels, select, refit, until done.

Each fit restarts from the seeded initial parameters on the labeled set plus
the currently selected pseudo-labeled samples. Pseudo labels are estimated
afresh after every fit, so earlier assignments never stick.

The loop is a resumable state machine: ``SelfTrainingRun.step`` performs one
fit, and the whole state can be written to and restored from a checkpoint
file between steps.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field, replace
from decimal import Decimal
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ardloop import sampling
from ardloop.core import DistanceRecord, LabelBook, Tracklet, l2_normalize
from ardloop.evalkit import cmc_map, label_accuracy, selection_quality
from ardloop.learner import (
    LearnerConfig,
    Model,
    embed_all,
    fit,
    model_from_parts,
    model_header,
    model_to_bytes,
)
from ardloop.pseudo_label import estimate_labels
from ardloop.sampling import ArdState, SamplerConfig

log = logging.getLogger(__name__)

STRATEGIES = ("srd", "ard", "linear", "absolute")
REASON_K = "k exceeded 1.0"
REASON_SRD = "srd converged"
REASON_COVERAGE = "full coverage"
REASON_CAP = "iteration cap"

ITERATION_COLUMNS = ["iteration", "k", "selected", "train_size", "pseudo_acc", "rank1", "map", "seconds"]
EXTRA_COLUMNS = ["phase", "sel_precision"]

CHECKPOINT_MAGIC = b"ARDLOOP-CKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated or incompatible checkpoint file."""


@dataclass(frozen=True)
class RunConfig:
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    strategy: str = "ard"
    fixed_k: float = 0.8
    seed: int = 0
    max_global_iterations: int = 200
    finalize_all: bool = True
    normalize: bool = False
    record_timing: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.strategy == "srd" and not self.fixed_k > 0:
            raise ValueError("srd strategy needs fixed_k > 0")
        if self.max_global_iterations < 1:
            raise ValueError("max_global_iterations must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["learner"]["ratio"] = list(self.learner.ratio)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        learner = dict(d.pop("learner"))
        learner["ratio"] = tuple(learner["ratio"])
        return cls(learner=LearnerConfig(**learner), sampler=SamplerConfig(**d.pop("sampler")), **d)


@dataclass(frozen=True)
class IterationRecord:
    """One row of the run log.

    ``selected`` is the size of the selection made from this row's label
    estimates; ``train_size`` is the size of the set this row's model was
    fitted on.
    """

    iteration: int
    k: Optional[str]
    selected: int
    train_size: int
    pseudo_acc: Optional[float]
    rank1: Optional[float]
    map: Optional[float]
    seconds: float
    phase: str
    sel_precision: Optional[float]

    def row(self, columns=ITERATION_COLUMNS) -> list:
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, float):
                return repr(x)
            return x

        return [fmt(getattr(self, c)) for c in columns]


@dataclass
class RunResult:
    model: Model
    records: list[IterationRecord]
    labelbook: LabelBook
    reason: str
    initial_accuracy: Optional[float]
    final_accuracy: Optional[float]


@dataclass
class LoopState:
    iteration: int = 0
    model: Optional[Model] = None
    estimates: dict = field(default_factory=dict)
    selection: dict = field(default_factory=dict)
    trained: dict = field(default_factory=dict)
    ard: Optional[ArdState] = None
    prev_count: Optional[int] = None
    t: int = 0
    records: list = field(default_factory=list)
    done: bool = False
    reason: Optional[str] = None
    finalized: bool = False


def _pseudo_table(est: dict, ids) -> dict:
    return {i: est[i] for i in sorted(ids)}


def camera_protocol(tracklets: Sequence[Tracklet], probe_camera: Optional[int] = None):
    """Probe/gallery index lists for the cross-camera protocol.

    Probes are the tracklets of ``probe_camera`` (default: lowest camera id)
    whose identity also appears under another camera; the gallery is every
    tracklet with a known identity from the other cameras.
    """
    known = [i for i, t in enumerate(tracklets) if t.identity_gt is not None]
    if not known:
        return [], []
    if probe_camera is None:
        probe_camera = min(tracklets[i].camera_id for i in known)
    gallery = [i for i in known if tracklets[i].camera_id != probe_camera]
    in_gallery = {tracklets[i].identity_gt for i in gallery}
    probes = [
        i for i in known
        if tracklets[i].camera_id == probe_camera and tracklets[i].identity_gt in in_gallery
    ]
    return probes, gallery


def reid_metrics(emb: np.ndarray, tracklets: Sequence[Tracklet], probe_camera: Optional[int] = None) -> dict:
    probes, gallery = camera_protocol(tracklets, probe_camera)
    if not probes:
        return {}
    cmc, mAP = cmc_map(
        emb[probes],
        [tracklets[i].identity_gt for i in probes],
        [tracklets[i].camera_id for i in probes],
        emb[gallery],
        [tracklets[i].identity_gt for i in gallery],
        [tracklets[i].camera_id for i in gallery],
        probe_names=[tracklets[i].tracklet_id for i in probes],
    )
    out = {f"rank{r}": float(cmc[min(r, len(cmc)) - 1]) for r in (1, 5, 10, 20)}
    out["map"] = mAP
    return out


class SelfTrainingRun:
    """Resumable driver for one self-training run."""

    def __init__(
        self,
        dataset: Sequence[Tracklet],
        labelbook: LabelBook,
        cfg: RunConfig,
        eval_set: Optional[Sequence[Tracklet]] = None,
    ):
        self.cfg = cfg
        self.tracklets = sorted(dataset, key=lambda t: t.tracklet_id)
        self.by_id = {t.tracklet_id: t for t in self.tracklets}
        if len(self.by_id) != len(self.tracklets):
            raise ValueError("duplicate tracklet ids in dataset")
        self.book = labelbook.copy()
        self.book.pseudo = {}
        self.book.unlabeled = labelbook.original_unlabeled
        self._check_preconditions()
        self.labeled_ids = sorted(self.book.labeled)
        self.unlabeled_ids = sorted(self.book.unlabeled)
        self.M = len(self.unlabeled_ids)
        self.gt = {t.tracklet_id: t.identity_gt for t in self.tracklets if t.identity_gt is not None}
        self.eval_set = list(eval_set) if eval_set is not None else self.tracklets
        self._eval_is_train = eval_set is None
        self.state = LoopState()

    def _check_preconditions(self):
        missing = (set(self.book.labeled) | self.book.unlabeled) - set(self.by_id)
        if missing:
            raise ValueError(f"label book references unknown tracklets: {sorted(missing)[:5]}")
        if len(set(self.book.labeled.values())) < 2:
            raise ValueError("the labeled set needs at least 2 identities")
        if not self.book.unlabeled:
            raise ValueError("the unlabeled set is empty")

    # -- helpers -----------------------------------------------------------

    def _fit(self, pseudo: dict) -> Model:
        train = [(self.by_id[i], self.book.labeled[i]) for i in self.labeled_ids]
        train += [(self.by_id[i], pseudo[i][0]) for i in sorted(pseudo)]
        return fit(train, self.cfg.learner)

    def _embed(self, model: Model, tracklets) -> np.ndarray:
        emb = embed_all(model, tracklets)
        return l2_normalize(emb) if self.cfg.normalize else emb

    def _estimate(self, model: Model):
        emb = self._embed(model, self.tracklets)
        row = {t.tracklet_id: r for r, t in enumerate(self.tracklets)}
        est = estimate_labels(
            [(i, emb[row[i]], self.book.labeled[i]) for i in self.labeled_ids],
            [(i, emb[row[i]]) for i in self.unlabeled_ids],
        )
        return est, emb

    def _metrics(self, model: Model, emb: np.ndarray, est: dict, selected) -> dict:
        labels = {i: est[i][0] for i in est if i in self.gt}
        known_sel = [i for i in selected if i in self.gt]
        out = {
            "pseudo_acc": label_accuracy(labels, self.gt) if labels else None,
            "sel_precision": selection_quality(known_sel, labels, self.gt)[0] if labels else None,
        }
        eval_emb = emb if self._eval_is_train else self._embed(model, self.eval_set)
        m = reid_metrics(eval_emb, self.eval_set)
        out["rank1"] = m.get("rank1")
        out["map"] = m.get("map")
        return out

    def _select(self, est: dict) -> set:
        st, s = self.state, self.cfg.sampler
        strategy = self.cfg.strategy
        records = {i: est[i][1] for i in est}
        if strategy in ("ard", "srd"):
            k = st.ard.k if strategy == "ard" else self.cfg.fixed_k
            return sampling.srd_select(records, k)
        if strategy == "linear":
            return sampling.linear_growth_select(records, st.t, s.p, self.M)
        step = sampling.linear_growth_count(1, s.p, self.M)
        return sampling.absolute_select(records, min(self.M, st.t * step))

    def _current_k(self) -> Optional[str]:
        if self.cfg.strategy == "ard":
            return str(self.state.ard.k)
        if self.cfg.strategy == "srd":
            return str(Decimal(str(self.cfg.fixed_k)))
        return None

    def _record(self, phase, k, selected, train_size, metrics, t0):
        seconds = time.perf_counter() - t0 if self.cfg.record_timing else 0.0
        rec = IterationRecord(
            iteration=self.state.iteration,
            k=k,
            selected=selected,
            train_size=train_size,
            pseudo_acc=metrics["pseudo_acc"],
            rank1=metrics["rank1"],
            map=metrics["map"],
            seconds=seconds,
            phase=phase,
            sel_precision=metrics["sel_precision"],
        )
        self.state.records.append(rec)
        log.info(
            "iter %d [%s] k=%s selected=%d train=%d acc=%s rank1=%s",
            rec.iteration, phase, k, selected, train_size, rec.pseudo_acc, rec.rank1,
        )
        return rec

    # -- loop --------------------------------------------------------------

    def start(self) -> None:
        t0 = time.perf_counter()
        st = self.state
        st.model = self._fit({})
        est, emb = self._estimate(st.model)
        s = self.cfg.sampler
        if self.cfg.strategy == "ard":
            records = {i: est[i][1] for i in est}
            k_s = sampling.k_probe(
                lambda k: len(sampling.srd_select(records, k)), len(self.labeled_ids), s
            )
            st.ard = ArdState(k=k_s, k_step=Decimal(str(s.k_step)))
        st.t = 1
        sel = self._select(est)
        if st.ard is not None:
            sampling.ard_step(st.ard, len(sel), s)
        st.prev_count = len(sel)
        st.estimates = est
        st.selection = _pseudo_table(est, sel)
        self._record("init", self._current_k(), len(sel), len(self.labeled_ids), self._metrics(st.model, emb, est, sel), t0)

    def step(self) -> None:
        st, s, cfg = self.state, self.cfg.sampler, self.cfg
        if st.done:
            raise RuntimeError("run already finished")
        t0 = time.perf_counter()
        st.iteration += 1
        st.trained = st.selection
        st.model = self._fit(st.trained)
        est, emb = self._estimate(st.model)
        k_row = self._current_k()
        st.t += 1
        sel = self._select(est)
        c = len(sel)

        if cfg.strategy == "ard":
            decision, new_k = sampling.ard_step(st.ard, c, s)
            if decision == sampling.ADVANCE:
                sel = sampling.srd_select({i: est[i][1] for i in est}, new_k)
                sampling.ard_step(st.ard, len(sel), s)
            elif decision == sampling.TERMINATE:
                st.done, st.reason = True, REASON_K
        elif cfg.strategy == "srd":
            if sampling.srd_converged(c, st.prev_count, s.b, self.M, s.b_mode):
                st.done, st.reason = True, REASON_SRD
        elif len(st.trained) >= self.M:
            st.done, st.reason = True, REASON_COVERAGE
        st.prev_count = c
        if not st.done and st.iteration >= cfg.max_global_iterations:
            st.done, st.reason = True, REASON_CAP

        st.estimates = est
        st.selection = _pseudo_table(est, sel)
        self._record("select", k_row, c, len(self.labeled_ids) + len(st.trained), self._metrics(st.model, emb, est, sel), t0)

    def finalize(self) -> None:
        st = self.state
        if not st.done or st.finalized:
            return
        st.finalized = True
        if not self.cfg.finalize_all or len(st.trained) == self.M:
            return
        t0 = time.perf_counter()
        st.iteration += 1
        st.trained = _pseudo_table(st.estimates, st.estimates)
        st.model = self._fit(st.trained)
        est, emb = self._estimate(st.model)
        st.estimates = est
        st.selection = {}
        k = str(st.ard.visited[-1]) if st.ard is not None else self._current_k()
        self._record("finalize", k, self.M, len(self.labeled_ids) + self.M, self._metrics(st.model, emb, est, ()), t0)

    def result(self) -> RunResult:
        st = self.state
        book = self.book.with_pseudo(st.trained)
        init_acc = st.records[0].pseudo_acc if st.records else None
        labels = {i: st.trained[i][0] for i in st.trained if i in self.gt}
        final_acc = label_accuracy(labels, self.gt) if labels else None
        return RunResult(st.model, list(st.records), book, st.reason, init_acc, final_acc)

    def run_to_end(self, checkpoint_every: int = 0, checkpoint_dir: Optional[Path] = None) -> RunResult:
        if not self.state.records:
            self.start()
        while not self.state.done:
            self.step()
            if checkpoint_every and checkpoint_dir and self.state.iteration % checkpoint_every == 0:
                save_checkpoint(self, Path(checkpoint_dir) / f"ckpt_{self.state.iteration:04d}.bin")
        self.finalize()
        return self.result()


def run(
    dataset: Sequence[Tracklet],
    labelbook: LabelBook,
    cfg: RunConfig,
    eval_set: Optional[Sequence[Tracklet]] = None,
    checkpoint_every: int = 0,
    checkpoint_dir: Optional[Path] = None,
) -> RunResult:
    """Run the self-training loop to termination."""
    return SelfTrainingRun(dataset, labelbook, cfg, eval_set).run_to_end(checkpoint_every, checkpoint_dir)


# -- checkpoints -----------------------------------------------------------


def _table_to_json(table: dict) -> dict:
    return {i: [lab, r.anchor_id, r.d_intra, r.d_inter] for i, (lab, r) in table.items()}


def _table_from_json(d: dict) -> dict:
    return {i: (v[0], DistanceRecord(v[1], v[2], v[3])) for i, v in d.items()}


def state_to_header(run: SelfTrainingRun) -> dict:
    st = run.state
    return {
        "config": run.cfg.to_dict(),
        "labeled": run.book.labeled,
        "unlabeled": sorted(run.book.unlabeled),
        "iteration": st.iteration,
        "estimates": _table_to_json(st.estimates),
        "selection": _table_to_json(st.selection),
        "trained": _table_to_json(st.trained),
        "ard": st.ard.to_dict() if st.ard is not None else None,
        "prev_count": st.prev_count,
        "t": st.t,
        "records": [asdict(r) for r in st.records],
        "done": st.done,
        "reason": st.reason,
        "finalized": st.finalized,
        "model": model_header(st.model),
    }


def save_checkpoint(run: SelfTrainingRun, path: Path) -> None:
    """Write the loop state as magic, version, JSON header length, JSON header, f64 model blob."""
    from ardloop.io import atomic_write_bytes

    header = json.dumps(state_to_header(run), sort_keys=True).encode()
    blob = model_to_bytes(run.state.model)
    data = CHECKPOINT_MAGIC + struct.pack("<IQQ", CHECKPOINT_VERSION, len(header), len(blob)) + header + blob
    atomic_write_bytes(Path(path), data)


def read_checkpoint(path: Path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    n_magic = len(CHECKPOINT_MAGIC)
    fixed = n_magic + struct.calcsize("<IQQ")
    if len(data) < fixed or data[:n_magic] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not an ardloop checkpoint")
    version, n_header, n_blob = struct.unpack("<IQQ", data[n_magic:fixed])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if len(data) != fixed + n_header + n_blob:
        raise CheckpointError(f"{path}: truncated or padded checkpoint ({len(data)} bytes)")
    try:
        header = json.loads(data[fixed:fixed + n_header])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    return header, data[fixed + n_header:]


def load_checkpoint(
    path: Path,
    dataset: Sequence[Tracklet],
    eval_set: Optional[Sequence[Tracklet]] = None,
    cfg: Optional[RunConfig] = None,
) -> SelfTrainingRun:
    """Rebuild a run from a checkpoint; ``cfg``, if given, must match the saved one."""
    header, blob = read_checkpoint(path)
    try:
        saved_cfg = RunConfig.from_dict(header["config"])
        if cfg is not None and replace(cfg, record_timing=True) != replace(saved_cfg, record_timing=True):
            raise CheckpointError(f"{path}: run configuration differs from the checkpoint's")
        book = LabelBook(dict(header["labeled"]), set(header["unlabeled"]))
        r = SelfTrainingRun(dataset, book, cfg or saved_cfg, eval_set)
        st = r.state
        st.iteration = header["iteration"]
        st.model = model_from_parts(header["model"], blob)
        st.estimates = _table_from_json(header["estimates"])
        st.selection = _table_from_json(header["selection"])
        st.trained = _table_from_json(header["trained"])
        st.ard = ArdState.from_dict(header["ard"]) if header["ard"] is not None else None
        st.prev_count = header["prev_count"]
        st.t = header["t"]
        st.records = [IterationRecord(**d) for d in header["records"]]
        st.done = header["done"]
        st.reason = header["reason"]
        st.finalized = header["finalized"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint: {exc}") from exc
    return r
