"""Tile datasets, description embeddings, similarity retrieval and world rendering."""

from __future__ import annotations

import csv
import hashlib
import os
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

import httpx
import numpy as np
from PIL import Image

from .worldmodel import CharacterInfo, TileLegend, WorldGrid

TILE_SIZE = 16
CSV_HEADER = ["id", "image_path", "description", "category"]


class DatasetError(RuntimeError):
    pass


class ZeroVector(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class MissingAssignment(KeyError):
    pass


class TileSizeMismatch(ValueError):
    pass


class TileCategory(str, Enum):
    ENVIRONMENT = "Environment"
    CHARACTER = "Character"


@dataclass(frozen=True)
class TileAsset:
    id: int
    image_path: str
    description: str
    category: TileCategory
    embedding: Optional[np.ndarray] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class TileDataset:
    category: TileCategory
    assets: tuple[TileAsset, ...]

    def __post_init__(self):
        if not self.assets:
            raise DatasetError("tile dataset is empty")
        ids = [a.id for a in self.assets]
        if len(set(ids)) != len(ids):
            raise DatasetError("tile ids must be unique")

    def __len__(self) -> int:
        return len(self.assets)

    def by_id(self, asset_id: int) -> TileAsset:
        for a in self.assets:
            if a.id == asset_id:
                return a
        raise KeyError(asset_id)

    def with_embeddings(self, embedder: "Embedder") -> "TileDataset":
        vecs = embedder.embed([a.description for a in self.assets])
        return replace(self, assets=tuple(replace(a, embedding=v) for a, v in zip(self.assets, vecs)))

    @classmethod
    def load_csv(cls, path, embedder: Optional["Embedder"] = None) -> "TileDataset":
        path = Path(path)
        try:
            with open(path, newline="", encoding="utf-8") as f:
                rows = list(csv.DictReader(f))
        except OSError as e:
            raise DatasetError(f"cannot read tile dataset {path}: {e}") from e
        if not rows or set(CSV_HEADER) - set(rows[0]):
            raise DatasetError(f"{path}: expected header {','.join(CSV_HEADER)}")
        assets = []
        for row in rows:
            img = Path(row["image_path"])
            if not img.is_absolute():
                img = path.parent / img
            try:
                asset = TileAsset(int(row["id"]), str(img), row["description"].strip(),
                                  TileCategory(row["category"]))
            except ValueError as e:
                raise DatasetError(f"{path}: bad row {row}: {e}") from e
            if not asset.description:
                raise DatasetError(f"{path}: tile {asset.id} has no description")
            assets.append(asset)
        categories = {a.category for a in assets}
        if len(categories) != 1:
            raise DatasetError(f"{path}: mixed categories {sorted(c.value for c in categories)}")
        sizes = set()
        for a in assets:
            try:
                im = load_tile_image(a.image_path)
            except OSError as e:
                raise DatasetError(f"{path}: cannot decode {a.image_path}: {e}") from e
            if im.width != im.height:
                raise DatasetError(f"{a.image_path} is not square")
            sizes.add(im.size)
        if len(sizes) != 1:
            raise DatasetError(f"{path}: tiles have different sizes {sorted(sizes)}")
        ds = cls(categories.pop(), tuple(assets))
        return ds.with_embeddings(embedder) if embedder is not None else ds


def write_csv(dataset: TileDataset, path, relative_to=None):
    base = Path(relative_to or Path(path).parent)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for a in dataset.assets:
            w.writerow([a.id, os.path.relpath(a.image_path, base).replace(os.sep, "/"),
                        a.description, a.category.value])


# ---------------------------------------------------------------- embeddings

class Embedder:
    kind = "abstract"
    dimension: int

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        raise NotImplementedError

    def embed_one(self, text: str) -> np.ndarray:
        return self.embed([text])[0]


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


class BagOfWordsEmbedder(Embedder):
    """Hashed token counts. Deterministic across processes and platforms."""

    kind = "DeterministicBagOfWords"

    def __init__(self, dimension: int = 1024):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dimension

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        out = []
        for t in texts:
            v = np.zeros(self.dimension, dtype=np.float64)
            for tok in tokenize(t):
                v[self._bucket(tok)] += 1.0
            out.append(v)
        return out


class RemoteEmbedder(Embedder):
    """OpenAI-style ``/embeddings`` endpoint."""

    kind = "RemoteEmbeddingAPI"

    def __init__(self, endpoint_url: str, model: str, dimension: int,
                 api_key_env_var: str = "OPENAI_API_KEY", timeout: float = 60.0,
                 transport: Optional[httpx.BaseTransport] = None):
        self.endpoint_url = endpoint_url.rstrip("/")
        self.model = model
        self.dimension = dimension
        self.api_key_env_var = api_key_env_var
        self.timeout = timeout
        self.transport = transport
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        todo = [t for t in dict.fromkeys(texts) if t not in self._cache]
        if todo:
            key = os.environ.get(self.api_key_env_var, "")
            headers = {"Authorization": f"Bearer {key}"} if key else {}
            with httpx.Client(timeout=self.timeout, transport=self.transport) as client:
                resp = client.post(f"{self.endpoint_url}/embeddings",
                                   json={"model": self.model, "input": todo}, headers=headers)
            resp.raise_for_status()
            data = sorted(resp.json()["data"], key=lambda d: d["index"])
            for t, d in zip(todo, data):
                v = np.asarray(d["embedding"], dtype=np.float64)
                if v.shape != (self.dimension,):
                    raise DimensionMismatch(f"expected {self.dimension} dims, got {v.shape}")
                self._cache[t] = v
        return [self._cache[t] for t in texts]


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _similarity(q: np.ndarray, v: np.ndarray) -> float:
    try:
        return cosine_similarity(q, v)
    except ZeroVector:
        return 0.0


def retrieve_tile(description: str, dataset: TileDataset, embedder: Embedder) -> TileAsset:
    """Asset whose description embedding is most cosine-similar; ties go to the lowest id."""
    if any(a.embedding is None for a in dataset.assets):
        dataset = dataset.with_embeddings(embedder)
    q = embedder.embed_one(description)
    best, best_key = None, None
    for a in dataset.assets:
        key = (_similarity(q, a.embedding), -a.id)
        if best_key is None or key > best_key:
            best, best_key = a, key
    return best


def assign_tiles(legend: TileLegend, characters: Sequence[CharacterInfo], env_dataset: TileDataset,
                 char_dataset: TileDataset, embedder: Embedder) -> dict[str, TileAsset]:
    by_symbol = {c.symbol: c for c in characters}
    out = {}
    for symbol in sorted(legend.entries):
        desc = legend.entries[symbol]
        if not desc.strip():
            raise ValueError(f"legend symbol {symbol!r} has no description")
        if symbol in legend.character_symbols or symbol in by_symbol:
            c = by_symbol.get(symbol)
            out[symbol] = retrieve_tile(c.description if c else desc, char_dataset, embedder)
        else:
            out[symbol] = retrieve_tile(desc, env_dataset, embedder)
    return out


# ---------------------------------------------------------------- rendering

@lru_cache(maxsize=1024)
def _load(path: str, mtime: float) -> Image.Image:
    with Image.open(path) as im:
        return im.convert("RGBA")


def load_tile_image(path: str) -> Image.Image:
    return _load(str(path), os.path.getmtime(path))


def _has_alpha(im: Image.Image) -> bool:
    return im.getchannel("A").getextrema()[0] < 255


def render_world(world: WorldGrid, assignment: Mapping[str, TileAsset]) -> Image.Image:
    """Paste each cell's tile; transparent tiles sit on the majority opaque neighbour tile."""
    missing = sorted(world.symbols() - set(assignment))
    if missing:
        raise MissingAssignment(f"no tile assigned for symbols {missing}")
    images = {s: load_tile_image(assignment[s].image_path) for s in world.symbols()}
    sizes = {im.size for im in images.values()}
    if len(sizes) != 1 or any(w != h for w, h in sizes):
        raise TileSizeMismatch(f"assigned tiles must share one square size, got {sorted(sizes)}")
    t = sizes.pop()[0]
    transparent = {s for s, im in images.items() if _has_alpha(im)}

    flat = "".join(world.rows)
    counts = Counter(ch for ch in flat if ch not in transparent)
    grid_backdrop = max(dict.fromkeys(ch for ch in flat if ch not in transparent),
                        key=lambda ch: counts[ch], default=None)

    out = Image.new("RGBA", (world.width * t, world.height * t), (0, 0, 0, 0))
    for (r, c), s in world.cells():
        tile = images[s]
        if s in transparent:
            near = []
            for cell in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if world.in_bounds(cell) and world[cell] not in transparent:
                    near.append(world[cell])
            if near:
                n = Counter(near)
                back = max(dict.fromkeys(near), key=lambda ch: n[ch])
            else:
                back = grid_backdrop
            if back is not None:
                tile = Image.alpha_composite(images[back], tile)
        out.paste(tile, (c * t, r * t))
    return out


def save_png(im: Image.Image, path) -> None:
    im.save(path, format="PNG", optimize=False)


# ---------------------------------------------------------------- placeholder tiles

def _darker(rgb: tuple[int, int, int], f: float = 0.6) -> tuple[int, int, int]:
    return tuple(int(v * f) for v in rgb)


def placeholder_image(color: tuple[int, int, int], size: int = TILE_SIZE, sprite: bool = False) -> Image.Image:
    """Flat colour with a 1px darker border; ``sprite`` draws a smaller block on transparency."""
    color = tuple(color)
    im = Image.new("RGBA", (size, size), (0, 0, 0, 0) if sprite else color + (255,))
    px = im.load()
    lo, hi = (3, size - 4) if sprite else (0, size - 1)
    edge = _darker(color) + (255,)
    for y in range(lo, hi + 1):
        for x in range(lo, hi + 1):
            on_border = x in (lo, hi) or y in (lo, hi)
            px[x, y] = edge if on_border else color + (255,)
    return im


def generate_placeholder_tileset(spec: Sequence[tuple[str, tuple[int, int, int]]], out_dir,
                                 category: TileCategory = TileCategory.ENVIRONMENT,
                                 csv_name: Optional[str] = None, size: int = TILE_SIZE) -> TileDataset:
    """Write one PNG per (description, colour) row plus a CSV manifest."""
    if not spec:
        raise ValueError("placeholder spec must not be empty")
    category = TileCategory(category)
    out_dir = Path(out_dir)
    sub = out_dir / category.value.lower()
    sub.mkdir(parents=True, exist_ok=True)
    sprite = category is TileCategory.CHARACTER
    assets = []
    for i, (desc, color) in enumerate(spec):
        p = sub / f"{i:03d}.png"
        save_png(placeholder_image(tuple(color), size, sprite), p)
        assets.append(TileAsset(i, str(p), desc, category))
    ds = TileDataset(category, tuple(assets))
    write_csv(ds, out_dir / (csv_name or f"{category.value.lower()}.csv"), relative_to=out_dir)
    return ds


PLACEHOLDER_ENVIRONMENT = [
    ("green grass ground", (84, 160, 64)),
    ("brown dirt path", (150, 110, 60)),
    ("grey stone wall", (120, 120, 128)),
    ("blue river water", (50, 100, 200)),
    ("wooden plank bridge", (160, 120, 70)),
    ("tall pine tree", (30, 90, 40)),
    ("rusty iron key", (180, 90, 40)),
    ("glowing oil lantern", (250, 210, 80)),
    ("locked treasure chest", (200, 150, 40)),
    ("heavy wooden gate door", (110, 70, 30)),
    ("coil of hemp rope", (210, 190, 140)),
    ("carved boat oar", (170, 130, 90)),
    ("old parchment map scroll", (230, 220, 180)),
    ("ancient stone shrine altar", (180, 180, 200)),
    ("molten lava pool", (230, 80, 20)),
    ("desert sand dune", (230, 210, 140)),
    ("white snow field", (240, 245, 250)),
    ("dark cave floor", (60, 55, 50)),
    ("red brick floor", (170, 70, 60)),
    ("round green bush", (60, 130, 50)),
    ("colorful flower patch", (220, 120, 180)),
    ("large grey boulder rock", (100, 100, 100)),
    ("wooden picket fence", (190, 160, 110)),
    ("village water well", (90, 110, 150)),
    ("burning wall torch", (255, 150, 30)),
    ("red healing potion bottle", (200, 30, 60)),
    ("steel sword weapon", (200, 200, 210)),
    ("round wooden shield", (140, 90, 50)),
    ("tall bookshelf with books", (120, 80, 50)),
    ("small wooden table", (150, 100, 60)),
    ("straw bed", (200, 180, 100)),
    ("crackling campfire", (240, 120, 30)),
]

PLACEHOLDER_CHARACTERS = [
    ("young ferrywoman hero with a hooded cloak", (40, 160, 200)),
    ("knight in shining plate armor", (190, 190, 200)),
    ("old wizard with a wooden staff", (120, 60, 180)),
    ("hulking bog troll monster", (80, 110, 60)),
    ("old fisherman villager with a net", (200, 160, 120)),
    ("sorceress in dark robes", (90, 20, 90)),
    ("skeleton warrior with a rusty blade", (230, 230, 210)),
    ("green slime blob", (100, 220, 90)),
    ("travelling merchant with a pack", (180, 120, 60)),
    ("small child villager", (250, 200, 150)),
    ("grey wolf beast", (110, 110, 120)),
    ("red fire dragon", (210, 40, 30)),
]


def default_tileset_dir() -> Path:
    return Path(str(resources.files("storyworld").joinpath("data", "tiles")))


def default_tileset_paths() -> tuple[str, str]:
    d = default_tileset_dir()
    return str(d / "environment.csv"), str(d / "character.csv")


def make_default_tileset(out_dir) -> tuple[TileDataset, TileDataset]:
    env = generate_placeholder_tileset(PLACEHOLDER_ENVIRONMENT, out_dir, TileCategory.ENVIRONMENT)
    char = generate_placeholder_tileset(PLACEHOLDER_CHARACTERS, out_dir, TileCategory.CHARACTER)
    return env, char
