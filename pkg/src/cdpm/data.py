"""Synthetic (point cloud, camera, feature map) dataset of analytic primitives."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .conditioning import ConditioningContext, FeatureMap, render_feature_map
from .errors import DataError, InvalidInputError
from .geometry import Camera, centralize
from .io import read_fmap, read_ply, write_fmap, write_ply
from .rng import make_rng
from .shapes import KINDS, PrimitiveShape, sample_surface

DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DatasetConfig:
    M: int = 350
    N: int = 256
    seed: int = 0
    image_size: int = 128
    train_fraction: float = 0.9
    kinds: tuple = KINDS
    scale_range: tuple = (0.15, 0.45)
    distance_range: tuple = (4.5, 5.5)
    elevation_deg: tuple = (10.0, 45.0)
    center: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "scale_range", tuple(self.scale_range))
        object.__setattr__(self, "distance_range", tuple(self.distance_range))
        object.__setattr__(self, "elevation_deg", tuple(self.elevation_deg))

    def validate(self) -> None:
        if self.M < 0 or self.N < 1 or self.image_size < 8:
            raise InvalidInputError("need M >= 0, N >= 1, image_size >= 8")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise InvalidInputError("train_fraction must be in [0, 1]")
        if not self.kinds or any(k not in KINDS for k in self.kinds):
            raise InvalidInputError(f"kinds must be drawn from {KINDS}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi <= 0.5:
            raise InvalidInputError("scale_range must satisfy 0 < lo <= hi <= 0.5")
        dlo, dhi = self.distance_range
        # the unit cube's bounding ball (radius sqrt(3)/2) must fit inside the view cone
        h = self.image_size / (2 * self.focal)
        if not np.sqrt(3) / 2 * np.hypot(1.0, h) / h < dlo <= dhi:
            raise InvalidInputError("distance_range too small for the unit-cube shapes")
        elo, ehi = self.elevation_deg
        if not -89 <= elo <= ehi <= 89:
            raise InvalidInputError("elevation_deg must lie within (-89, 89)")

    @property
    def focal(self) -> float:
        return 2.0 * self.image_size

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("kinds", "scale_range", "distance_range", "elevation_deg"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        return cls(**d)


@dataclass
class Item:
    index: int
    shape: PrimitiveShape
    cloud: np.ndarray
    camera: Camera
    fmap: FeatureMap

    def context(self, mode: str = "L", mask_ratio: float = 0.0, mask_seed: int | None = None):
        return ConditioningContext(self.fmap, self.camera, mode, mask_ratio, mask_seed)


@dataclass
class Dataset:
    config: DatasetConfig
    items: list = field(default_factory=list)
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    @property
    def M(self) -> int:
        return len(self.items)

    def save(self, root) -> Path:
        return save_dataset(self, root)

    @classmethod
    def load(cls, root) -> "Dataset":
        return load_dataset(root)


def random_shape(rng: np.random.Generator, cfg: DatasetConfig) -> PrimitiveShape:
    kind = cfg.kinds[int(rng.integers(len(cfg.kinds)))]
    scale = rng.uniform(*cfg.scale_range, size=3)
    R = Rotation.random(random_state=rng).as_matrix()
    shape = PrimitiveShape(kind, scale, R)
    # bring the rotated shape inside [-0.5, 0.5]^3
    reach = float(np.max(shape.half_extent()))
    if reach > 0.5:
        shape = PrimitiveShape(kind, scale * (0.5 / reach), R)
    return shape


def random_camera(rng: np.random.Generator, cfg: DatasetConfig) -> Camera:
    az = rng.uniform(0.0, 2 * np.pi)
    el = np.deg2rad(rng.uniform(*cfg.elevation_deg))
    dist = rng.uniform(*cfg.distance_range)
    eye = dist * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    return Camera.look_at(eye, focal=cfg.focal, width=cfg.image_size, height=cfg.image_size)


def make_item(cfg: DatasetConfig, i: int) -> Item:
    rng = make_rng(cfg.seed, 0x44415441, i)
    shape = random_shape(rng, cfg)
    cam = random_camera(rng, cfg)
    cloud = sample_surface(shape, cfg.N, int(rng.integers(2 ** 63)))
    if cfg.center:
        cloud = centralize(cloud)
    # stored clouds are float32 on disk; quantize now so round trips are exact
    cloud = cloud.astype(np.float32).astype(np.float64)
    fmap = render_feature_map(shape, cam)
    if not fmap.silhouette.any():
        raise DataError(f"item {i}: object not visible from its camera")
    return Item(i, shape, cloud, cam, fmap)


def generate_dataset(cfg: DatasetConfig) -> Dataset:
    cfg.validate()
    items = [make_item(cfg, i) for i in range(cfg.M)]
    order = make_rng(cfg.seed, 0x53504C4954).permutation(cfg.M)
    n_train = int(round(cfg.train_fraction * cfg.M))
    train = sorted(int(i) for i in order[:n_train])
    test = sorted(int(i) for i in order[n_train:])
    return Dataset(cfg, items, train, test)


# --- persistence -------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def item_stem(i: int) -> str:
    return f"{i:05d}"


def save_dataset(ds: Dataset, root) -> Path:
    """Write ``manifest.json`` plus ``items/<id>.{ply,fmap,camera.json}``."""
    root = Path(root)
    (root / "items").mkdir(parents=True, exist_ok=True)
    entries = []
    for it in ds.items:
        stem = root / "items" / item_stem(it.index)
        files = {"cloud": f"items/{item_stem(it.index)}.ply",
                 "fmap": f"items/{item_stem(it.index)}.fmap",
                 "camera": f"items/{item_stem(it.index)}.camera.json"}
        write_ply(stem.with_suffix(".ply"), it.cloud)
        write_fmap(stem.with_suffix(".fmap"), it.fmap)
        (root / files["camera"]).write_text(json.dumps(it.camera.to_dict(), sort_keys=True, indent=1))
        entries.append({
            "id": it.index, "kind": it.shape.kind, "shape": it.shape.to_dict(), "files": files,
            "sha256": {k: _sha256(root / v) for k, v in files.items()},
        })
    manifest = {"format_version": DATASET_FORMAT_VERSION, "config": ds.config.to_dict(),
                "split": {"train": ds.train, "test": ds.test}, "items": entries}
    (root / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return root


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise DataError(f"no dataset manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported dataset format {manifest.get('format_version')}")
    return manifest


def load_dataset(root, verify: bool = True) -> Dataset:
    root = Path(root)
    manifest = read_manifest(root)
    cfg = DatasetConfig.from_dict(manifest["config"])
    items = []
    for e in manifest["items"]:
        if verify:
            for k, rel in e["files"].items():
                if not (root / rel).exists():
                    raise DataError(f"missing file {rel}")
                if _sha256(root / rel) != e["sha256"][k]:
                    raise DataError(f"hash mismatch for {rel}")
        cam = Camera.from_dict(json.loads((root / e["files"]["camera"]).read_text()))
        items.append(Item(e["id"], PrimitiveShape.from_dict(e["shape"]),
                          read_ply(root / e["files"]["cloud"]), cam,
                          read_fmap(root / e["files"]["fmap"])))
    return Dataset(cfg, items, list(manifest["split"]["train"]), list(manifest["split"]["test"]))
