"""Paradigm comparison and ablation grids, with an optional checkpoint cache.

Every stage result is keyed by a fingerprint of exactly the config fields it
depends on, so the detector and recognizer trained once are reused by every
row and every ablation cell that shares their settings.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..spotter import Spotter
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import DATA_KEYS, STAGE_KEYS, ExperimentConfig
from .evaluation import MetricsReport, evaluate
from . import training as T

log = logging.getLogger(__name__)

CSV_COLUMNS = ("paradigm", "det_P", "det_R", "det_F", "e2e_P", "e2e_R", "e2e_F",
               "trainable_params", "total_params", "wall_s")
ABLATIONS = ("bridge_components", "init_mode", "encoder_depth")
DEPTHS = (0, 1, 3, 6)

_BRIDGE_KEYS = (STAGE_KEYS["detector"] + STAGE_KEYS["recognizer"]
                + ("bridge_lr", "bridge_iters", "encoder_depth", "bridge_init", "use_bridge",
                   "det_adapter", "rec_adapter", "lambda_det", "lambda_rec",
                   "bridge_train_size", "test_size", "curve_points"))
_FINETUNE_KEYS = (STAGE_KEYS["detector"] + STAGE_KEYS["recognizer"]
                  + ("finetune_lr", "finetune_iters", "bridge_train_size"))
_E2E_KEYS = DATA_KEYS + ("det_lr", "weight_decay", "e2e_iters", "batch_size",
                         "lambda_det", "lambda_rec", "bridge_train_size")
STAGE_FINGERPRINT_KEYS = {
    "detector": STAGE_KEYS["detector"], "recognizer": STAGE_KEYS["recognizer"],
    "bridged": tuple(dict.fromkeys(_BRIDGE_KEYS)),
    "finetune_det": tuple(dict.fromkeys(_FINETUNE_KEYS)),
    "finetune_rec": tuple(dict.fromkeys(_FINETUNE_KEYS)),
    "end_to_end": _E2E_KEYS,
}


@dataclass
class Stage:
    checkpoint: Checkpoint
    wall_s: float
    losses: list = field(default_factory=list)
    curve: list = field(default_factory=list)


class RunCache:
    """Stage results in memory, and on disk when ``root`` is given."""

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root else None
        self._mem: dict[str, Stage] = {}

    def key(self, kind: str, cfg: ExperimentConfig) -> str:
        return f"{kind}-{cfg.fingerprint(STAGE_FINGERPRINT_KEYS[kind])}"

    def get(self, kind: str, cfg: ExperimentConfig, build) -> Stage:
        key = self.key(kind, cfg)
        if key in self._mem:
            return self._mem[key]
        if self.root is not None and (self.root / f"{key}.ckpt").exists():
            side = json.loads((self.root / f"{key}.json").read_text())
            stage = Stage(load_checkpoint(self.root / f"{key}.ckpt"), side["wall_s"],
                          side["losses"], [tuple(p) for p in side["curve"]])
            log.info("reusing cached %s", key)
        else:
            log.info("training %s", key)
            stage = build()
            if self.root is not None:
                save_checkpoint(self.root / f"{key}.ckpt", stage.checkpoint)
                (self.root / f"{key}.json").write_text(json.dumps(
                    {"wall_s": stage.wall_s, "losses": stage.losses,
                     "curve": stage.curve}))
        self._mem[key] = stage
        return stage


class Runner:
    """Trains stages on demand for one base config and evaluates pipelines."""

    def __init__(self, cfg: ExperimentConfig, cache: RunCache | None = None):
        self.cfg = cfg
        self.cache = cache or RunCache()
        self.splits = T.splits_for(cfg)

    @staticmethod
    def _stage(res: T.StageResult) -> Stage:
        return Stage(res.checkpoint, res.wall_s, res.losses, res.curve)

    def detector(self, cfg=None) -> Stage:
        cfg = cfg or self.cfg
        return self.cache.get("detector", cfg,
                              lambda: self._stage(T.train_detector(cfg, self.splits)))

    def recognizer(self, cfg=None) -> Stage:
        cfg = cfg or self.cfg
        return self.cache.get("recognizer", cfg,
                              lambda: self._stage(T.train_recognizer(cfg, self.splits)))

    def curve_evaluator(self, system: T.BridgedSystem) -> float:
        return evaluate(system.spotter(), self.splits["test"]).e2e_F

    def bridge(self, cfg=None) -> Stage:
        cfg = cfg or self.cfg

        def build():
            det, rec = self.detector(cfg), self.recognizer(cfg)
            _, res = T.train_bridge(det.checkpoint, rec.checkpoint, cfg, self.splits,
                                    evaluator=self.curve_evaluator)
            return self._stage(res)
        return self.cache.get("bridged", cfg, build)

    def finetune(self, cfg=None) -> tuple[Stage, Stage]:
        cfg = cfg or self.cfg
        det, rec = self.detector(cfg), self.recognizer(cfg)
        kw = dict(split_name="bridge_train", iters=cfg.finetune_iters, lr=cfg.finetune_lr)
        d = self.cache.get("finetune_det", cfg, lambda: self._stage(
            T.train_detector(cfg, self.splits, init=det.checkpoint, **kw)))
        r = self.cache.get("finetune_rec", cfg, lambda: self._stage(
            T.train_recognizer(cfg, self.splits, init=rec.checkpoint, **kw)))
        return d, r

    def end_to_end(self, cfg=None) -> Stage:
        cfg = cfg or self.cfg
        return self.cache.get("end_to_end", cfg,
                              lambda: self._stage(T.train_end_to_end(cfg, self.splits)[1]))

    # -- evaluation -----------------------------------------------------------------------

    def _report(self, spotter: Spotter, trainable: int, total: int, wall: float
                ) -> MetricsReport:
        return evaluate(spotter, self.splits["test"], trainable_params=trainable,
                        total_params=total, wall_s=wall)

    def eval_two_step(self, det: Stage, rec: Stage, wall: float | None = None) -> MetricsReport:
        d, r = T.load_detector(det.checkpoint), T.load_recognizer(rec.checkpoint)
        n = d.store.count() + r.store.count()
        return self._report(Spotter(d, r), n, n,
                            det.wall_s + rec.wall_s if wall is None else wall)

    def eval_system(self, stage: Stage) -> MetricsReport:
        system = T.load_system(stage.checkpoint)
        return self._report(system.spotter(), system.store.count(trainable_only=True),
                            system.store.count(), stage.wall_s)

    def eval_end_to_end(self, stage: Stage) -> MetricsReport:
        system = T.load_system(stage.checkpoint)
        n = system.store.count()
        return self._report(system.spotter(), n, n, stage.wall_s)


# --- tables ----------------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def table_csv(rows: list[tuple[str, MetricsReport]], first: str = "paradigm",
              record_timing: bool = False) -> str:
    """Fixed-column CSV. ``wall_s`` is left empty unless ``record_timing``,
    so that reruns with the same seed are byte-identical."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((first,) + CSV_COLUMNS[1:])
    for name, r in rows:
        d = r.as_dict()
        w.writerow([name] + [_fmt(d[c]) for c in CSV_COLUMNS[1:-1]]
                   + [_fmt(r.wall_s) if record_timing else ""])
    return buf.getvalue()


def write_table(out_dir: str | Path, stem: str, rows, cfg: ExperimentConfig,
                first: str = "paradigm", record_timing: bool = False, extra=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}.csv"
    path.write_text(table_csv(rows, first, record_timing))
    mirror = {"config": cfg.to_dict(),
              "rows": [dict(r.as_dict(), **{first: n},
                            trainable_fraction=r.trainable_fraction) for n, r in rows]}
    if extra:
        mirror.update(extra)
    (out / f"{stem}.json").write_text(json.dumps(mirror, indent=2, sort_keys=True) + "\n")
    return path


def read_table(path: str | Path) -> dict[str, dict[str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    first = next(iter(rows[0])) if rows else "paradigm"
    return {r[first]: {k: float(v) for k, v in r.items() if k != first and v != ""}
            for r in rows}


# --- experiments ---------------------------------------------------------------------------

def compare_paradigms(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                      cache: RunCache | None = None, record_timing: bool = False
                      ) -> list[tuple[str, MetricsReport]]:
    """Two-step, two-step fine-tuned, end-to-end and bridged rows on one data draw."""
    run = Runner(cfg, cache)
    det, rec = run.detector(), run.recognizer()
    rows = [("two_step", run.eval_two_step(det, rec))]
    fd, fr = run.finetune()
    rows.append(("two_step_finetune", run.eval_two_step(
        fd, fr, det.wall_s + rec.wall_s + fd.wall_s + fr.wall_s)))
    rows.append(("end_to_end", run.eval_end_to_end(run.end_to_end())))
    bridged = run.bridge()
    rep = run.eval_system(bridged)
    rep.wall_s = det.wall_s + rec.wall_s + bridged.wall_s
    rows.append(("bridge", rep))
    for name, r in rows:
        log.info("%-18s det_F %.4f e2e_F %.4f", name, r.det_F, r.e2e_F)
    if out_dir is not None:
        write_table(out_dir, "compare", rows, cfg, record_timing=record_timing)
    return rows


def ablation_cells(cfg: ExperimentConfig, which: str) -> list[tuple[str, ExperimentConfig | None]]:
    """(name, config) per cell; a ``None`` config is the unbridged two-step baseline."""
    if which == "bridge_components":
        return [("baseline", None),
                ("bridge", cfg.replace(use_bridge=True, det_adapter=False, rec_adapter=False)),
                ("bridge_da", cfg.replace(use_bridge=True, det_adapter=True, rec_adapter=False)),
                ("bridge_da_ra", cfg.replace(use_bridge=True, det_adapter=True,
                                             rec_adapter=True))]
    if which == "init_mode":
        return [(m, cfg.replace(bridge_init=m)) for m in ("zero", "gaussian")]
    if which == "encoder_depth":
        return [(f"depth_{k}", cfg.replace(encoder_depth=k)) for k in DEPTHS]
    raise ValueError(f"unknown ablation {which!r}; choose from {ABLATIONS}")


def run_ablation(cfg: ExperimentConfig, which: str, out_dir: str | Path | None = None,
                 cache: RunCache | None = None, record_timing: bool = False) -> dict:
    """Grid over one axis with shared seeds; returns rows and, per cell, curves."""
    cells = ablation_cells(cfg, which)
    run = Runner(cfg, cache)
    rows, curves, losses = [], {}, {}
    for name, cell in cells:
        if cell is None:
            rows.append((name, run.eval_two_step(run.detector(), run.recognizer())))
            continue
        stage = run.bridge(cell)
        rows.append((name, run.eval_system(stage)))
        curves[name], losses[name] = stage.curve, stage.losses
        log.info("%-14s e2e_F %.4f", name, rows[-1][1].e2e_F)
    if out_dir is not None:
        out = Path(out_dir)
        write_table(out, f"ablation_{which}", rows, cfg, first="cell",
                    record_timing=record_timing, extra={"curves": curves})
        if which == "init_mode":
            with open(out / "ablation_init_mode_curves.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("cell", "iteration", "e2e_F"))
                for name, pts in curves.items():
                    w.writerows((name, it, _fmt(f)) for it, f in pts)
            with open(out / "ablation_init_mode_losses.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("cell", "iteration", "loss"))
                for name, ls in losses.items():
                    w.writerows((name, i, _fmt(v)) for i, v in enumerate(ls))
    return {"rows": rows, "curves": curves, "losses": losses}
