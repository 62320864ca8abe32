import logging
from pathlib import Path

import pytest
from rich.logging import RichHandler

from src import BLAS_THREAD_VARIABLES, pin_blas_threads
from src.config import (RunConfig, Settings, build_run_config, flatten_model_config, load_run_config,
                        unflatten_model_config)
from src.errors import ConfigurationError
from src.logging_setup import configure_logging
from src.models import MODEL_PRESETS, ModelConfig, SublayerKind


@pytest.mark.parametrize("name", sorted(MODEL_PRESETS))
def test_presets_flatten_and_restore(name):
    cfg = ModelConfig.preset(name)
    flat = flatten_model_config(cfg)
    assert all(isinstance(v, str) for v in flat.values())
    assert unflatten_model_config(flat) == cfg


def test_flatten_prefixes_memory_fields_and_skips_unset():
    flat = flatten_model_config(ModelConfig.preset("aishell_sanm_dfsmn"))
    assert flat["mem_n1"] == "5" and flat["encoder_kind"] == "sanm" and flat["post_norm"] == "true"
    assert "dfsmn_hidden" not in flat and "mem_cfg" not in flat


def test_unflatten_rejects_invalid_values():
    flat = flatten_model_config(ModelConfig.preset("desk_sanm"))
    flat["heads"] = "3"
    with pytest.raises(ConfigurationError):
        unflatten_model_config(flat)


def test_default_run_config_is_consistent():
    run = RunConfig()
    assert run.model.encoder_kind == SublayerKind.SANM
    assert run.features.stacked_dim == run.model.input_dim == 560


def test_build_routes_prefixed_keys():
    run = build_run_config({"preset": "desk_dfsmn", "d_basic": "32", "d_ffn": "64", "mem_n1": "2", "mem_s1": "2",
                            "schedule_warmup_n": "400", "task_alphabet_size": "10", "max_steps": "50",
                            "dropout": "0.2", "seed": "9"})
    assert run.model.encoder_kind == SublayerKind.DFSMN
    assert run.model.d_basic == 32 and run.model.mem_cfg.d == 32
    assert (run.model.mem_cfg.n1, run.model.mem_cfg.n2, run.model.mem_cfg.s1) == (2, 4, 2)
    assert run.schedule.warmup_n == 400 and run.schedule.d_model == 32
    assert run.task.alphabet_size == 10
    assert run.train.max_steps == 50 and run.train.seed == 9
    assert run.model.dropout == run.train.dropout == 0.2


def test_explicit_schedule_width_wins():
    assert build_run_config({"schedule_d_model": "512"}).schedule.d_model == 512


@pytest.mark.parametrize("raw", [
    {"bogus": "1"},
    {"preset": "nope"},
    {"heads": "3"},
    {"task_base_dim": "40"},
    {"task_alphabet_size": "30"},
    {"label_smoothing": "1.5"},
    {"schedule_warmup_n": "0"},
])
def test_invalid_run_configs(raw):
    with pytest.raises(ConfigurationError):
        build_run_config(raw)


def test_load_run_config_file(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("# tiny run\npreset=desk_san\nmax_steps=3\nmem_n1 = 2\n")
    run = load_run_config(path)
    assert run.model.encoder_kind == SublayerKind.SAN
    assert run.train.max_steps == 3 and run.model.mem_cfg.n1 == 2


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_run_config(tmp_path / "absent.conf")


def test_settings_read_environment(monkeypatch):
    monkeypatch.setenv("SANM_SEED", "11")
    monkeypatch.setenv("SANM_OUTPUT_DIR", "elsewhere")
    monkeypatch.setenv("SANM_BENCH_REPS", "7")
    settings = Settings()
    assert (settings.seed, settings.output_dir, settings.bench_reps) == (11, "elsewhere", 7)


def test_heldout_corpus_defaults_under_output_dir(monkeypatch):
    monkeypatch.delenv("SANM_HELDOUT_CORPUS", raising=False)
    monkeypatch.setenv("SANM_OUTPUT_DIR", "elsewhere")
    assert Path(Settings().heldout_corpus) == Path("elsewhere") / "data" / "heldout.feats"
    monkeypatch.setenv("SANM_HELDOUT_CORPUS", "corpora/dev.feats")
    assert Settings().heldout_corpus == "corpora/dev.feats"


def test_blas_threads_default_to_one_without_overriding():
    environ = pin_blas_threads({"MKL_NUM_THREADS": "4"})
    assert environ == {"OMP_NUM_THREADS": "1", "OPENBLAS_NUM_THREADS": "1", "MKL_NUM_THREADS": "4"}
    assert set(BLAS_THREAD_VARIABLES) == set(pin_blas_threads({}))


def test_settings_reject_too_few_bench_reps(monkeypatch):
    monkeypatch.setenv("SANM_BENCH_REPS", "2")
    with pytest.raises(ConfigurationError):
        Settings()


@pytest.mark.parametrize("name", ["desk_sanm.conf", "desk_san.conf", "desk_dfsmn.conf"])
def test_shipped_configs_load(name):
    run = load_run_config(Path(__file__).resolve().parent.parent / "configs" / name)
    assert run.train.max_steps == 5000 and run.schedule.warmup_n == 800
    assert run.schedule.d_model == run.model.d_model == 64


def test_configure_logging_attaches_one_rich_handler():
    logger = configure_logging("debug")
    configure_logging("warning")
    assert [type(h) for h in logger.handlers].count(RichHandler) == 1
    assert logger.level == logging.WARNING and not logger.propagate
    assert logging.getLogger("src.analysis").getEffectiveLevel() == logging.WARNING
