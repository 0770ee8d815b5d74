"""Training-set size x augmentation level grid on phantom data.

Every cell builds its patch set from the first ``size`` volumes of a fixed
training pool, augments it offline at ``level``, trains a freshly
initialised network for ``epochs`` and scores it on a held-out validation
cohort. A cell depends only on (config, size, level), so cells can run in
any order or in parallel and produce identical results.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .augment import AugmentConfig, augment_dataset, translation_bound
from .errors import IncompleteGrid
from .metrics import dice_score
from .model.checkpoint import dump_checkpoint
from .model.network import NetworkConfig, ResidualUNet
from .model.optim import AdamConfig
from .model.train import TrainConfig, predict_volume, train
from .patching import TilingConfig, extract_pairs
from .phantom import PhantomConfig, generate_phantom

log = logging.getLogger(__name__)

TABLE_TRAINING = "table1_training.csv"
TABLE_VALIDATION = "table2_validation.csv"
CURVES = "curves.csv"

FULL_TRAINING_SIZES = [1, 3, 5, 7, 9]
FULL_AUG_LEVELS = [5, 10, 20, 30, 40, 50]


@dataclass
class AugmentRanges:
    """The per-run parts of AugmentConfig; level and seed are set per cell."""

    angle_range: tuple[float, float] = (-20.0, 20.0)
    scale_range: tuple[float, float] = (0.8, 1.2)
    translation_range: Optional[tuple[float, float]] = None  # None: 50/128 of the patch size
    include_original: bool = True

    def __post_init__(self):
        self.angle_range = tuple(float(v) for v in self.angle_range)
        self.scale_range = tuple(float(v) for v in self.scale_range)
        if self.translation_range is not None:
            self.translation_range = tuple(float(v) for v in self.translation_range)

    def for_cell(self, level: int, seed: int, patch_size: int) -> AugmentConfig:
        translation = self.translation_range
        if translation is None:
            bound = translation_bound(patch_size)
            translation = (-bound, bound)
        return AugmentConfig(
            level=level,
            angle_range=self.angle_range,
            scale_range=self.scale_range,
            translation_range=translation,
            seed=seed,
            include_original=self.include_original,
        )


@dataclass
class ExperimentConfig:
    training_sizes: list[int] = field(default_factory=lambda: [1, 3])
    aug_levels: list[int] = field(default_factory=lambda: [0, 5, 50])
    epochs: int = 5
    validation_size: int = 10
    batch_size: int = 8
    dice_epsilon: float = 1.0
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    tiling: TilingConfig = field(default_factory=lambda: TilingConfig(32, 16))
    network: NetworkConfig = field(default_factory=NetworkConfig)
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    augment: AugmentRanges = field(default_factory=AugmentRanges)
    seed: int = 0
    output_dir: Optional[str] = None

    _NESTED = {
        "phantom": PhantomConfig,
        "tiling": TilingConfig,
        "network": NetworkConfig,
        "optimizer": AdamConfig,
        "augment": AugmentRanges,
    }

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.training_sizes or not self.aug_levels:
            raise ValueError("training_sizes and aug_levels must be non-empty")
        if min(self.training_sizes) < 1 or min(self.aug_levels) < 0:
            raise ValueError("training sizes must be >= 1 and levels >= 0")
        if self.epochs < 0 or self.validation_size < 1 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0, validation_size and batch_size >= 1")
        if self.tiling.patch_size != self.network.patch_size:
            raise ValueError("tiling.patch_size must equal network.patch_size")

    @property
    def pool_size(self) -> int:
        return max(self.training_sizes)

    def training_indices(self, size: int) -> list[int]:
        return list(range(size))

    def validation_indices(self) -> list[int]:
        # validation volumes start after the training pool, so the two never overlap
        return list(range(self.pool_size, self.pool_size + self.validation_size))

    def cells(self) -> list[tuple[int, int]]:
        """(size, level) pairs in table order: level-major, then size."""
        return [(size, level) for level in self.aug_levels for size in self.training_sizes]

    def cell_seeds(self, size: int, level: int) -> tuple[int, int, int]:
        """(network init, augmentation, batch order) seeds for one cell."""
        state = np.random.SeedSequence([self.seed, size, level]).generate_state(3, dtype=np.uint32)
        return tuple(int(s) for s in state)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment config fields: {sorted(unknown)}")
        kwargs = dict(data)
        for name, sub in cls._NESTED.items():
            if name in kwargs and isinstance(kwargs[name], dict):
                kwargs[name] = sub(**kwargs[name])
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RunRecord:
    training_size: int
    aug_level: int
    train_dice: list[float]
    validation_dice: float
    seed: int
    wall_time: float = 0.0
    status: str = "ok"
    error: str = ""

    @property
    def cell_id(self) -> str:
        return cell_id(self.training_size, self.aug_level)

    @property
    def final_train_dice(self) -> float:
        return self.train_dice[-1] if self.train_dice else float("nan")

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def cell_id(size: int, level: int) -> str:
    return f"n{size}_x{level}"


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_training_set(cfg: ExperimentConfig, size: int, level: int, aug_seed: int):
    pairs = []
    for index in cfg.training_indices(size):
        image, mask = generate_phantom(cfg.phantom, index)
        pairs.extend((img.pixels, msk.pixels) for img, msk in extract_pairs(image, mask, cfg.tiling, str(index)))
    aug = cfg.augment.for_cell(level, aug_seed, cfg.tiling.patch_size)
    data = augment_dataset(pairs, aug)
    images = np.stack([img for img, _ in data]).astype(np.float32)
    masks = np.stack([msk for _, msk in data]).astype(np.float32)
    return images, masks


def run_cell(cfg: ExperimentConfig, size: int, level: int, out_dir: Optional[Path] = None) -> RunRecord:
    """Train and validate one grid cell. Failures are captured in the record."""
    start = time.perf_counter()
    net_seed, aug_seed, order_seed = cfg.cell_seeds(size, level)
    try:
        images, masks = build_training_set(cfg, size, level, aug_seed)
        net_cfg = NetworkConfig(cfg.network.depth, cfg.network.base_filters, cfg.network.patch_size, net_seed)
        net = ResidualUNet(net_cfg)
        train_cfg = TrainConfig(cfg.batch_size, cfg.optimizer, cfg.dice_epsilon, order_seed)
        history = train(net, (images, masks), cfg.epochs, train_cfg)
        scores = []
        for index in cfg.validation_indices():
            image, truth = generate_phantom(cfg.phantom, index)
            scores.append(dice_score(predict_volume(net, image, cfg.tiling), truth))
        total = 0.0
        for s in scores:
            total += s
        record = RunRecord(size, level, history, total / len(scores), net_seed)
        if out_dir is not None:
            _atomic_write(out_dir / "cells" / f"{record.cell_id}.ckpt", dump_checkpoint(net))
    except Exception as exc:  # noqa: BLE001 - a failed cell must not abort the grid
        log.exception("cell %s failed", cell_id(size, level))
        record = RunRecord(size, level, [], float("nan"), net_seed, status="failed", error=f"{type(exc).__name__}: {exc}")
    record.wall_time = time.perf_counter() - start
    if out_dir is not None:
        _atomic_write(out_dir / "cells" / f"{record.cell_id}.json", json.dumps(asdict(record), indent=2).encode())
    log.info("cell %s: train %.3f val %.3f (%.1fs)", record.cell_id, record.final_train_dice, record.validation_dice, record.wall_time)
    return record


def _run_cell_args(args):
    return run_cell(*args)


def run_grid(cfg: ExperimentConfig, jobs: int = 1, out_dir=None) -> list[RunRecord]:
    out = Path(out_dir) if out_dir is not None else (Path(cfg.output_dir) if cfg.output_dir else None)
    tasks = [(cfg, size, level, out) for size, level in cfg.cells()]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell_args, tasks))
    return [run_cell(*t) for t in tasks]


def _grid(records: list[RunRecord]) -> tuple[list[int], list[int], dict]:
    if not records:
        raise IncompleteGrid("no run records")
    failed = [r.cell_id for r in records if not r.ok]
    if failed:
        raise IncompleteGrid(f"failed cells: {', '.join(failed)}")
    sizes = sorted({r.training_size for r in records})
    levels = sorted({r.aug_level for r in records})
    by_cell = {(r.training_size, r.aug_level): r for r in records}
    missing = [cell_id(s, l) for l in levels for s in sizes if (s, l) not in by_cell]
    if missing:
        raise IncompleteGrid(f"missing cells: {', '.join(missing)}")
    return sizes, levels, by_cell


def format_table(records: list[RunRecord], value) -> str:
    """Rows are augmentation levels, columns training-set sizes, 3 decimals."""
    sizes, levels, by_cell = _grid(records)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["aug_level"] + [str(s) for s in sizes])
    for level in levels:
        writer.writerow([f"{level}x"] + [f"{value(by_cell[(s, level)]):.3f}" for s in sizes])
    return buf.getvalue()


def format_curves(records: list[RunRecord]) -> str:
    sizes, levels, by_cell = _grid(records)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cell_id", "training_size", "aug_level", "epoch", "split", "dice"])
    for level in levels:
        for size in sizes:
            r = by_cell[(size, level)]
            for epoch, d in enumerate(r.train_dice, start=1):
                writer.writerow([r.cell_id, size, level, epoch, "training", f"{d:.6f}"])
            writer.writerow([r.cell_id, size, level, len(r.train_dice), "validation", f"{r.validation_dice:.6f}"])
    return buf.getvalue()


def emit_tables(records: list[RunRecord], out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    training = format_table(records, lambda r: r.final_train_dice)
    validation = format_table(records, lambda r: r.validation_dice)
    paths = out_dir / TABLE_TRAINING, out_dir / TABLE_VALIDATION
    _atomic_write(paths[0], training.encode())
    _atomic_write(paths[1], validation.encode())
    return paths


def emit_curves(records: list[RunRecord], out_dir) -> Path:
    path = Path(out_dir) / CURVES
    _atomic_write(path, format_curves(records).encode())
    return path


def read_table(path) -> dict[tuple[int, int], float]:
    """Parse an emitted table back to {(size, level): value}."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    sizes = [int(s) for s in rows[0][1:]]
    return {
        (size, int(row[0].rstrip("x"))): float(v)
        for row in rows[1:]
        for size, v in zip(sizes, row[1:])
    }


def curve_series(path, group_by: str) -> dict[int, dict[int, list[float]]]:
    """Training curves grouped as ``{group value: {other value: dice per epoch}}``.

    ``group_by="aug_level"`` gives one plot per level with one series per
    training-set size; ``group_by="training_size"`` the transpose.
    """
    other = "training_size" if group_by == "aug_level" else "aug_level"
    out: dict[int, dict[int, list[float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["split"] != "training":
                continue
            out.setdefault(int(row[group_by]), {}).setdefault(int(row[other]), []).append(float(row["dice"]))
    return out
