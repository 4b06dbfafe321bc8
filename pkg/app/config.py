import json
from functools import lru_cache
from pathlib import Path
from typing import Optional

from dotenv import dotenv_values
from loguru import logger
from pydantic import ValidationError
from pydantic_settings import BaseSettings


class ConfigError(Exception):
    """Error al leer o validar un archivo de configuración."""
    pass


class Settings(BaseSettings):
    """Configuración centralizada desde variables de entorno"""

    # General
    log_level: str = "INFO"
    logs_dir: str = "logs"

    # Salidas
    output_dir: str = "runs"
    report_dir_name: str = "reportes"

    # Evaluación de checkpoints en paralelo
    eval_workers: int = 1

    class Config:
        env_file = ".env"
        case_sensitive = False


@lru_cache()
def get_settings() -> Settings:
    """Singleton de configuración"""
    return Settings()


def read_key_value_file(path: str | Path) -> dict[str, str]:
    """
    Lee un archivo plano key=value (mismo formato que un .env).

    Args:
        path: Ruta al archivo de configuración

    Returns:
        Diccionario con las claves en minúscula y sus valores como texto

    Raises:
        ConfigError: Si el archivo no existe o tiene claves sin valor
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Archivo de configuración no encontrado: {path}")

    values = dotenv_values(path)
    empty = sorted(k for k, v in values.items() if v is None)
    if empty:
        raise ConfigError(f"Claves sin valor en {path}: {', '.join(empty)}")

    logger.debug(f"Configuración leída de {path}: {len(values)} claves")
    return {k.strip().lower(): v.strip() for k, v in values.items()}


def load_experiment_config(path: Optional[str | Path], overrides: Optional[dict] = None):
    """
    Carga y valida la configuración completa de un experimento.

    Las claves del archivo se reparten entre EnvConfig, TrainConfig y
    ExperimentConfig; los overrides (flags de la CLI) tienen prioridad.

    Args:
        path: Archivo key=value (None = solo valores por defecto)
        overrides: Valores que reemplazan a los del archivo

    Returns:
        Tupla (EnvConfig, TrainConfig, ExperimentConfig)

    Raises:
        ConfigError: Si hay claves desconocidas o valores inválidos
    """
    from app.schemas import EnvConfig, ExperimentConfig, TrainConfig

    raw: dict = read_key_value_file(path) if path is not None else {}
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})

    known = set(EnvConfig.model_fields) | set(TrainConfig.model_fields) | set(ExperimentConfig.model_fields)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"Claves desconocidas: {', '.join(unknown)}")

    try:
        env_cfg = EnvConfig(**{k: v for k, v in raw.items() if k in EnvConfig.model_fields})
        train_cfg = TrainConfig(**{k: v for k, v in raw.items() if k in TrainConfig.model_fields})
        exp_cfg = ExperimentConfig(**{k: v for k, v in raw.items() if k in ExperimentConfig.model_fields})
    except ValidationError as e:
        details = "; ".join(
            f"{err['loc'][0] if err['loc'] else 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Configuración inválida: {details}")

    return env_cfg, train_cfg, exp_cfg


def write_resolved_config(path: str | Path, *models) -> Path:
    """
    Escribe el snapshot de configuración resuelta (key=value, ordenado).

    Args:
        path: Archivo destino
        *models: Modelos pydantic cuyos campos se vuelcan

    Returns:
        Ruta escrita
    """
    merged: dict = {}
    for model in models:
        merged.update(model.model_dump(mode="json"))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key}={_format_value(merged[key])}" for key in sorted(merged)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, dict)):
        return json.dumps(value, separators=(",", ":"))
    return str(value)
