"""
Conjunto de transiciones ⟨s, a, r, s′⟩ y su formato binario.

Los registros se guardan en un arreglo estructurado de numpy cuyo layout
coincide byte a byte con el archivo en disco (ver GUIA_FORMATOS.md), así que
guardar y cargar no requiere conversión campo a campo.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from loguru import logger

from app.rl_core import ActionClasses, State, classes_from_dict, classes_to_dict
from app.schemas import ContactBand
from app.sim_world import JointConfig
from app.tactile_image import DEFAULT_TAU, TACTILE_SHAPE, InputShapeError, load_pgm, save_pgm


MAGIC = b"SFDQN-DS\0"
FORMAT_VERSION = 1
HEADER = struct.Struct("<9sHQHH32sQ")

RECORD_DTYPE = np.dtype([
    ("s_image", "u1", TACTILE_SHAPE),
    ("s_joints", "<f8", (4,)),
    ("action", "u1"),
    ("reward", "<f8"),
    ("n_image", "u1", TACTILE_SHAPE),
    ("n_joints", "<f8", (4,)),
])


class DatasetFormatError(Exception):
    """Archivo de dataset corrupto o truncado."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class TransitionUnit:
    s: State
    a: int
    r: float
    s_next: State


@dataclass
class Dataset:
    """
    Secuencia ordenada de unidades más sus metadatos.

    Attributes:
        records: Arreglo estructurado con RECORD_DTYPE, en orden de generación
        seed: Semilla de generación
        config_hash: SHA-256 de la configuración del entorno
        shard_seeds: Semillas de los shards combinados (vacío si no hubo shards)
        background: Fondo sin contacto con el que se calcularon las recompensas
        tau: Umbral usado para el ContactRate
        band: Banda de contacto de la recompensa
        classes: Clasificación de acciones vigente durante la generación
    """

    records: np.ndarray
    seed: int = 0
    config_hash: bytes = bytes(32)
    shard_seeds: list[int] = field(default_factory=list)
    background: Optional[np.ndarray] = None
    tau: int = DEFAULT_TAU
    band: ContactBand = field(default_factory=ContactBand)
    classes: Optional[ActionClasses] = None

    def __post_init__(self):
        if self.records.dtype != RECORD_DTYPE:
            raise TypeError(f"records debe tener dtype {RECORD_DTYPE}, se recibió {self.records.dtype}")
        if len(self.config_hash) != 32:
            raise ValueError("config_hash debe tener 32 bytes")

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, index: int) -> TransitionUnit:
        rec = self.records[index]
        return TransitionUnit(
            s=State(rec["s_image"].copy(), JointConfig.from_array(rec["s_joints"])),
            a=int(rec["action"]),
            r=float(rec["reward"]),
            s_next=State(rec["n_image"].copy(), JointConfig.from_array(rec["n_joints"])),
        )

    def __iter__(self) -> Iterator[TransitionUnit]:
        for i in range(len(self)):
            yield self[i]

    @property
    def actions(self) -> np.ndarray:
        return self.records["action"]

    @property
    def rewards(self) -> np.ndarray:
        return self.records["reward"]

    def with_records(self, records: np.ndarray) -> "Dataset":
        """Copia de los metadatos con otros registros."""
        return Dataset(
            records=records,
            seed=self.seed,
            config_hash=self.config_hash,
            shard_seeds=list(self.shard_seeds),
            background=self.background,
            tau=self.tau,
            band=self.band,
            classes=self.classes,
        )

    @classmethod
    def from_units(cls, units: Sequence[TransitionUnit], **metadata) -> "Dataset":
        records = np.zeros(len(units), dtype=RECORD_DTYPE)
        for i, unit in enumerate(units):
            records[i] = pack_unit(unit)
        return cls(records=records, **metadata)


def pack_unit(unit: TransitionUnit) -> tuple:
    return (
        unit.s.image,
        unit.s.joints.as_array(),
        unit.a,
        unit.r,
        unit.s_next.image,
        unit.s_next.joints.as_array(),
    )


def split(d: Dataset, train_fraction: float = 0.9, seed: int = 0) -> tuple[Dataset, Dataset]:
    """
    Mezcla con semilla y divide en entrenamiento / prueba.

    Args:
        d: Dataset completo
        train_fraction: Fracción de entrenamiento en (0, 1)
        seed: Semilla de la mezcla

    Returns:
        Tupla (train, test), partición exacta y disjunta

    Example:
        >>> train, test = split(d12000, 0.9)
        >>> len(train), len(test)
        (10800, 1200)
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction debe estar en (0, 1), se recibió {train_fraction}")

    order = np.random.default_rng(seed).permutation(len(d))
    n_train = int(round(len(d) * train_fraction))
    return d.with_records(d.records[order[:n_train]]), d.with_records(d.records[order[n_train:]])


def merge_datasets(parts: Sequence[Dataset], seed: int, config_hash: bytes) -> Dataset:
    """
    Concatena shards generados de forma independiente.

    Raises:
        ValueError: Si no hay partes o los shards no comparten fondo y banda
    """
    if not parts:
        raise ValueError("No hay shards para combinar")

    first = parts[0]
    for i, part in enumerate(parts[1:], 1):
        if part.band != first.band or part.tau != first.tau:
            raise ValueError(f"El shard {i} usa otra banda o umbral")
        if (part.background is None) != (first.background is None) or (
            part.background is not None and not np.array_equal(part.background, first.background)
        ):
            raise ValueError(f"El shard {i} se generó con otro fondo")

    merged = first.with_records(np.concatenate([p.records for p in parts]))
    merged.seed = seed
    merged.config_hash = config_hash
    merged.shard_seeds = [p.seed for p in parts]
    return merged


def save_dataset(d: Dataset, path: str | Path) -> Path:
    """Escribe cabecera + N registros de tamaño fijo."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = TACTILE_SHAPE
    header = HEADER.pack(MAGIC, FORMAT_VERSION, len(d), h, w, d.config_hash, d.seed)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(d.records).tobytes())
    logger.debug(f"Dataset guardado en {path}: {len(d)} unidades")
    return path


def load_dataset(path: str | Path, with_sidecar: bool = True) -> Dataset:
    """
    Lee un dataset binario (y su sidecar, si existe).

    Raises:
        FileNotFoundError: Si el archivo no existe
        DatasetFormatError: Cabecera corrupta o archivo truncado, con el offset
    """
    path = Path(path)
    data = path.read_bytes()

    if len(data) < HEADER.size:
        raise DatasetFormatError(f"Cabecera incompleta en {path}: {len(data)} bytes", len(data))

    magic, version, n, h, w, config_hash, seed = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"Magic inválido en {path}: {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"Versión no soportada: {version}", len(MAGIC))
    if (h, w) != TACTILE_SHAPE:
        raise DatasetFormatError(f"Dimensiones de imagen inválidas: {h}x{w}", len(MAGIC) + 2 + 8)

    body = len(data) - HEADER.size
    expected = n * RECORD_DTYPE.itemsize
    if body < expected:
        complete = body // RECORD_DTYPE.itemsize
        raise DatasetFormatError(
            f"Archivo truncado: {complete} de {n} registros completos",
            HEADER.size + complete * RECORD_DTYPE.itemsize,
        )
    if body > expected:
        raise DatasetFormatError(f"{body - expected} bytes sobrantes tras {n} registros", HEADER.size + expected)

    records = np.frombuffer(data, dtype=RECORD_DTYPE, count=n, offset=HEADER.size).copy()
    dataset = Dataset(records=records, seed=seed, config_hash=config_hash)

    if with_sidecar and sidecar_path(path).exists():
        apply_sidecar(dataset, path)
    return dataset


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def background_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.background.pgm")


def write_sidecar(d: Dataset, path: str | Path, extra: Optional[dict] = None) -> Path:
    """
    Escribe el sidecar JSON (semilla, hash, shards, banda, clases) y el fondo en PGM.

    Args:
        d: Dataset
        path: Ruta del archivo binario del dataset
        extra: Campos adicionales para el sidecar
    """
    path = Path(path)
    meta = {
        "n_units": len(d),
        "seed": d.seed,
        "config_hash": d.config_hash.hex(),
        "shard_seeds": d.shard_seeds,
        "tau": d.tau,
        "band": {"cr_min": d.band.cr_min, "cr_max": d.band.cr_max},
        "action_classes": classes_to_dict(d.classes) if d.classes else None,
        "background": None,
    }
    if d.background is not None:
        meta["background"] = save_pgm(d.background, background_path(path)).name
    meta.update(extra or {})

    target = sidecar_path(path)
    target.write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    return target


def apply_sidecar(d: Dataset, path: str | Path) -> Dataset:
    """
    Completa los metadatos de un dataset cargado con su sidecar.

    Raises:
        DatasetFormatError: Si el sidecar no es JSON válido o el fondo que
            referencia falta o no es una imagen 64x48 (offset 0 del sidecar)
    """
    path = Path(path)
    target = sidecar_path(path)
    try:
        meta = json.loads(target.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"Sidecar inválido {target}: {e.msg}", 0) from e

    d.shard_seeds = list(meta.get("shard_seeds") or [])
    d.tau = int(meta.get("tau", DEFAULT_TAU))
    if meta.get("band"):
        d.band = ContactBand(**meta["band"])
    if meta.get("action_classes"):
        d.classes = classes_from_dict(meta["action_classes"])
    if meta.get("background"):
        background = path.parent / meta["background"]
        try:
            d.background = load_pgm(background)
        except (FileNotFoundError, InputShapeError) as e:
            raise DatasetFormatError(f"Fondo referenciado por {target.name} inutilizable: {e}", 0) from e
    return d


def write_dataset(d: Dataset, path: str | Path, extra: Optional[dict] = None) -> Path:
    """Guarda binario + sidecar + fondo en una sola llamada."""
    save_dataset(d, path)
    write_sidecar(d, path, extra)
    return Path(path)
