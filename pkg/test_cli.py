"""
Pruebas de la línea de comandos: códigos de salida y flujo completo
gen-data → train → eval → rollout → inspect con un experimento pequeño.
"""

import pandas as pd
import pytest

import main as cli
from app.dataset import write_dataset
from tests.builders import synthetic_dataset

SMALL_EXPERIMENT = """\
# experimento reducido para pruebas
seed=3
surface_kind=flat
reset_surface_span=0
n_units=40
train_steps=10
units_per_step=2
sync_interval=5
checkpoint_interval=5
lr=0.001
warmup=5
rollout_steps=20
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "experimento.cfg").write_text(SMALL_EXPERIMENT, encoding="utf-8")
    return tmp_path


def run_pipeline(root, name: str) -> dict:
    """Ejecuta gen-data, train y eval en root/name y devuelve las carpetas."""
    base = root / name
    dirs = {k: base / k for k in ("datos", "entrenamiento", "eval")}
    assert cli.main(["gen-data", "--config", "experimento.cfg", "--out", str(dirs["datos"])]) == cli.EXIT_OK
    assert cli.main([
        "train", str(dirs["datos"] / "dataset.bin"), "--config", "experimento.cfg", "--out", str(dirs["entrenamiento"])
    ]) == cli.EXIT_OK
    assert cli.main([
        "eval", str(dirs["entrenamiento"] / "checkpoints"), str(dirs["entrenamiento"] / "test.bin"),
        "--config", "experimento.cfg", "--out", str(dirs["eval"]),
    ]) == cli.EXIT_OK
    return dirs


def test_full_pipeline_outputs(workdir):
    dirs = run_pipeline(workdir, "a")

    assert (dirs["datos"] / "dataset.json").exists()
    assert (dirs["datos"] / "dataset.background.pgm").exists()
    assert len((dirs["datos"] / "action_classes.txt").read_text().splitlines()) == 9
    assert (dirs["datos"] / "resolved_config.cfg").exists()

    checkpoints = sorted(p.name for p in (dirs["entrenamiento"] / "checkpoints").iterdir())
    assert checkpoints == ["ckpt_00001.bin", "ckpt_00002.bin"]
    log = pd.read_csv(dirs["entrenamiento"] / "train_log.csv")
    assert list(log.columns) == ["step", "mean_loss", "checkpoint_id"]
    assert len(log) == 10

    curve = pd.read_csv(dirs["eval"] / "learning_curve.csv")
    assert curve["step"].tolist() == [5, 10]
    assert (curve["n_states"] == 4).all()
    final = pd.read_csv(dirs["eval"] / "precision_report.csv")
    assert final["step"].item() == 10
    actions = pd.read_csv(dirs["eval"] / "action_distribution.csv")
    assert actions["count"].sum() == 4


def test_pipeline_is_deterministic(workdir):
    a = run_pipeline(workdir, "a")
    b = run_pipeline(workdir, "b")

    for key, name in [
        ("datos", "dataset.bin"),
        ("entrenamiento", "train_log.csv"),
        ("entrenamiento", "final.bin"),
        ("entrenamiento", "checkpoints/ckpt_00002.bin"),
        ("eval", "learning_curve.csv"),
        ("eval", "precision_report.csv"),
    ]:
        assert (a[key] / name).read_bytes() == (b[key] / name).read_bytes(), name


def test_eval_report_flag(workdir):
    dirs = run_pipeline(workdir, "a")
    out = workdir / "con_reporte"
    code = cli.main([
        "eval", str(dirs["entrenamiento"] / "checkpoints"), str(dirs["entrenamiento"] / "test.bin"),
        "--config", "experimento.cfg", "--out", str(out), "--report",
    ])
    assert code == cli.EXIT_OK
    assert len(list((out / "reportes").glob("evaluacion_*.pdf"))) == 1
    assert len(list((out / "reportes").glob("evaluacion_*.xlsx"))) == 1


def test_rollout_with_checkpoint_and_oracle(workdir):
    dirs = run_pipeline(workdir, "a")

    out = workdir / "rollout_red"
    code = cli.main(["rollout", str(dirs["entrenamiento"] / "final.bin"), "--config", "experimento.cfg",
                     "--out", str(out), "--frame-every", "5"])
    assert code == cli.EXIT_OK
    trace = pd.read_csv(out / "rollout_trace.csv")
    assert list(trace.columns) == ["step", "action", "contact_rate", "in_band"]
    assert len(trace) == 20
    assert len(list((out / "frames").glob("*.pgm"))) == 4

    out = workdir / "rollout_oraculo"
    assert cli.main(["rollout", "--oracle", "--config", "experimento.cfg", "--out", str(out)]) == cli.EXIT_OK
    summary = pd.read_csv(out / "rollout_report.csv")
    assert summary["in_band_fraction"].item() >= 0.9


def test_inspect_dataset(workdir):
    dirs = run_pipeline(workdir, "a")
    out = workdir / "inspeccion"
    assert cli.main(["inspect", str(dirs["datos"] / "dataset.bin"), "--out", str(out)]) == cli.EXIT_OK
    assert pd.read_csv(out / "action_distribution.csv")["count"].sum() == 40
    histogram = pd.read_csv(out / "contact_rate_histogram.csv")
    assert "[20, 40]" in histogram["bin"].tolist()
    assert histogram["count"].sum() == 40


def test_inspect_empty_file_is_format_error(workdir):
    (workdir / "vacio.bin").write_bytes(b"")
    assert cli.main(["inspect", "vacio.bin", "--out", "inspeccion"]) == cli.EXIT_FORMAT


def test_inspect_without_background_is_format_error(workdir):
    write_dataset(synthetic_dataset(5, seed=2), workdir / "datos.bin")
    (workdir / "datos.background.pgm").unlink()
    assert cli.main(["inspect", "datos.bin", "--out", "inspeccion"]) == cli.EXIT_FORMAT


def test_missing_config_file(workdir):
    assert cli.main(["gen-data", "--config", "no_existe.cfg"]) == cli.EXIT_CONFIG


def test_missing_dataset(workdir):
    assert cli.main(["train", "no_existe.bin", "--config", "experimento.cfg"]) == cli.EXIT_CONFIG


def test_rollout_without_checkpoint(workdir):
    assert cli.main(["rollout", "--config", "experimento.cfg"]) == cli.EXIT_CONFIG


def test_invalid_config_value(workdir):
    (workdir / "malo.cfg").write_text("gamma=1.5\n", encoding="utf-8")
    assert cli.main(["gen-data", "--config", "malo.cfg", "--out", "x"]) == cli.EXIT_CONFIG


def test_exploding_rewards_exit_with_numeric_code(workdir):
    d = synthetic_dataset(20, seed=1)
    d.records["reward"] = 1e12
    write_dataset(d, workdir / "explosivo.bin")
    code = cli.main(["train", "explosivo.bin", "--config", "experimento.cfg", "--out", "entrenamiento"])
    assert code == cli.EXIT_NUMERIC
    assert (workdir / "entrenamiento" / "train_log.csv").exists()
