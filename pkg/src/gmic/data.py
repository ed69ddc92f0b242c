"""Dataset containers and the on-disk layout.

An exam is one breast with two views (cc, mlo) sharing a label pair
(benign, malignant). On disk each split is a directory with an
index.csv (exam id, breast id, view, labels, file paths), images as
8-bit PGM and masks as 0/255 PGM alongside.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .pgm import read_pgm, to_float, to_u8, write_pgm

VIEW_NAMES = ("cc", "mlo")

INDEX_COLUMNS = (
    "exam_id", "breast_id", "view", "y_benign", "y_malignant",
    "image_path", "mask_benign_path", "mask_malignant_path",
)


@dataclass
class View:
    view_name: str
    image: np.ndarray  # [H,W] float32 in [0,1], u8-quantized values
    mask_benign: np.ndarray | None = None  # [H,W] bool, None when empty
    mask_malignant: np.ndarray | None = None


@dataclass
class Exam:
    exam_id: str
    breast_id: str
    y_benign: int
    y_malignant: int
    views: list[View] = field(default_factory=list)

    @property
    def positive(self) -> bool:
        return bool(self.y_benign or self.y_malignant)


@dataclass
class Split:
    exams: list[Exam]

    def __len__(self) -> int:
        return len(self.exams)

    def labels(self) -> np.ndarray:
        """[n_exams, 2] int array of (benign, malignant) labels."""
        return np.array([[e.y_benign, e.y_malignant] for e in self.exams], dtype=np.int64)

    def positive_flags(self) -> np.ndarray:
        return np.array([e.positive for e in self.exams], dtype=bool)


SPLIT_NAMES = ("train", "val", "test")


@dataclass
class Dataset:
    train: Split
    val: Split
    test: Split

    def split(self, name: str) -> Split:
        if name not in SPLIT_NAMES:
            raise ConfigError(f"unknown split {name!r}; expected one of {SPLIT_NAMES}")
        return getattr(self, name)


def write_split(split: Split, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for exam in split.exams:
        for view in exam.views:
            stem = f"{exam.exam_id}_{view.view_name}"
            image_path = f"images/{stem}.pgm"
            write_pgm(out_dir / image_path, to_u8(view.image))
            mask_paths = {}
            for cls, mask in (("benign", view.mask_benign), ("malignant", view.mask_malignant)):
                if mask is not None and mask.any():
                    mask_paths[cls] = f"masks/{stem}_{cls}.pgm"
                    write_pgm(out_dir / mask_paths[cls], np.where(mask, 255, 0).astype(np.uint8))
                else:
                    mask_paths[cls] = ""
            rows.append((exam.exam_id, exam.breast_id, view.view_name, exam.y_benign, exam.y_malignant,
                         image_path, mask_paths["benign"], mask_paths["malignant"]))
    with open(out_dir / "index.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(INDEX_COLUMNS)
        writer.writerows(rows)


def load_split(split_dir: Path) -> Split:
    split_dir = Path(split_dir)
    index = split_dir / "index.csv"
    if not index.exists():
        raise ConfigError(f"no index.csv under {split_dir}")
    exams: dict[str, Exam] = {}
    with open(index, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            exam = exams.get(row["exam_id"])
            if exam is None:
                exam = Exam(row["exam_id"], row["breast_id"], int(row["y_benign"]), int(row["y_malignant"]))
                exams[row["exam_id"]] = exam
            masks = {}
            for cls in ("benign", "malignant"):
                rel = row[f"mask_{cls}_path"]
                masks[cls] = (read_pgm(split_dir / rel) > 127) if rel else None
            exam.views.append(View(
                view_name=row["view"],
                image=to_float(read_pgm(split_dir / row["image_path"])),
                mask_benign=masks["benign"],
                mask_malignant=masks["malignant"],
            ))
    return Split(list(exams.values()))


def write_dataset(dataset: Dataset, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    for name in SPLIT_NAMES:
        write_split(dataset.split(name), out_dir / name)


def load_dataset(data_dir: Path) -> Dataset:
    data_dir = Path(data_dir)
    return Dataset(*(load_split(data_dir / name) for name in SPLIT_NAMES))
