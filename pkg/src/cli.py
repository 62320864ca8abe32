"""Command-line interface for the SAN-M toolkit."""

import sys
from pathlib import Path
from typing import List

import click
from rich.console import Console

from .analysis import BENCH_KINDS, DEFAULT_BENCH_LENGTHS
from .app import SanmApp
from .config import settings
from .errors import (CheckpointFormatError, ConfigurationError, CorpusFormatError, NonFiniteError, SanmError)
from .logging_setup import configure_logging
from .models import SyntheticTask

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

error_console = Console(stderr=True)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, NonFiniteError):
        return EXIT_DIVERGED
    if isinstance(exc, (ConfigurationError, click.UsageError)):
        return EXIT_USAGE
    if isinstance(exc, (CorpusFormatError, CheckpointFormatError, SanmError, OSError)):
        return EXIT_DATA
    return EXIT_USAGE


def fail(action: str, exc: BaseException) -> None:
    error_console.print(f"[red]❌ Error {action}: {exc}[/red]", markup=True, highlight=False)
    sys.exit(exit_code_for(exc))


def parse_int_list(ctx, param, value: str) -> List[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}")


class SanmGroup(click.Group):
    """Click group whose usage errors exit with code 1."""

    def main(self, *args, **kwargs):
        kwargs["standalone_mode"] = False
        try:
            code = super().main(*args, **kwargs)
        except click.ClickException as exc:
            exc.show()
            sys.exit(EXIT_USAGE)
        except click.exceptions.Abort:
            sys.exit(EXIT_USAGE)
        sys.exit(code or EXIT_OK)


@click.group(cls=SanmGroup)
@click.version_option(version="1.0.0")
@click.option("--log-level", default=None, help="Logging level (default: SANM_LOG_LEVEL or INFO)")
def cli(log_level):
    """SAN-M - memory-equipped self-attention encoder-decoder for desk-scale ASR experiments."""
    configure_logging(log_level or settings.log_level)


@cli.command()
@click.option("--config", "-c", "config_path", required=True, type=click.Path(), help="Flat key=value run config")
@click.option("--out", "-o", "out_dir", required=True, type=click.Path(), help="Output directory")
def train(config_path, out_dir):
    """Train a model on the synthetic task."""

    app = SanmApp()

    try:
        result = app.train(config_path, out_dir)
        app.print_train_summary(result)
    except Exception as e:
        fail("training", e)


@cli.command(name="eval")
@click.option("--ckpt", required=True, type=click.Path(), help="Checkpoint file")
@click.option("--corpus", default=None, type=click.Path(),
              help="Corpus feature file (default: SANM_HELDOUT_CORPUS)")
@click.option("--workers", "-w", default=1, type=int, help="Decoding threads")
@click.option("--output", "-o", type=click.Path(), help="Output report path")
@click.option("--format", "-f", type=click.Choice(["markdown", "json", "csv"]), default="markdown",
              help="Output format")
def evaluate(ckpt, corpus, workers, output, format):
    """Greedy-decode a corpus and report CER."""

    app = SanmApp()

    try:
        report = app.evaluate(ckpt, corpus or settings.heldout_corpus, workers=workers, output_path=output,
                              format=format)
        app.print_eval_summary(report)
    except Exception as e:
        fail("evaluating", e)


@cli.command()
@click.option("--kinds", default="san,dfsmn,sanm,fir", help=f"Comma-separated kinds from {', '.join(BENCH_KINDS)}")
@click.option("--lengths", default=",".join(map(str, DEFAULT_BENCH_LENGTHS)), callback=parse_int_list,
              help="Comma-separated, strictly increasing sequence lengths")
@click.option("--d", "width", default=64, type=int, help="Model width")
@click.option("--reps", default=None, type=int, help="Repetitions per point (default: SANM_BENCH_REPS)")
@click.option("--output", "-o", type=click.Path(), help="Output report path")
@click.option("--format", "-f", type=click.Choice(["markdown", "json", "csv"]), default="markdown",
              help="Output format")
def bench(kinds, lengths, width, reps, output, format):
    """Time single sub-layer forwards and fit log-log slopes."""

    app = SanmApp()

    try:
        kind_list = [k.strip() for k in kinds.split(",") if k.strip()]
        report = app.bench(kind_list, lengths, d=width, reps=reps, output_path=output, format=format)
        app.print_bench_summary(report)
    except Exception as e:
        fail("benchmarking", e)


@cli.command()
@click.option("--ckpt", required=True, type=click.Path(), help="Checkpoint file")
@click.option("--corpus", default=None, type=click.Path(),
              help="Corpus feature file (default: SANM_HELDOUT_CORPUS)")
@click.option("--utt", "utt_id", default=None, help="Utterance id (default: first in corpus)")
@click.option("--out", "-o", "out_dir", required=True, type=click.Path(), help="Output directory")
@click.option("--per-head", is_flag=True, help="Also export every head's attention map")
@click.option("--mirror", is_flag=True, help="Export decoder filters lookahead-first")
def viz(ckpt, corpus, utt_id, out_dir, per_head, mirror):
    """Export attention maps and memory filters for one utterance."""

    app = SanmApp()

    try:
        dump = app.visualize(ckpt, corpus or settings.heldout_corpus, utt_id, out_dir, per_head=per_head,
                             mirror=mirror)
        app.print_analysis_summary(dump)
    except Exception as e:
        fail("exporting analysis", e)


@cli.command()
@click.option("--out", "-o", "out_dir", required=True, type=click.Path(), help="Output directory")
@click.option("--train-count", default=500, type=int, help="Training utterances")
@click.option("--heldout-count", default=100, type=int, help="Held-out utterances")
@click.option("--alphabet", default=20, type=int, help="Alphabet size")
@click.option("--max-tokens", default=12, type=int, help="Maximum tokens per utterance")
@click.option("--noise", default=0.0, type=float, help="Noise level")
@click.option("--seed", default=None, type=int, help="Task seed (default: SANM_SEED)")
def generate(out_dir, train_count, heldout_count, alphabet, max_tokens, noise, seed):
    """Write a synthetic train/heldout corpus."""

    app = SanmApp()

    try:
        task = SyntheticTask(alphabet_size=alphabet, max_tokens=max_tokens, noise_level=noise,
                             seed=settings.seed if seed is None else seed)
        for split, path in app.generate(out_dir, task, train_count, heldout_count).items():
            click.echo(f"✅ {split}: {path}")
    except Exception as e:
        fail("generating corpus", e)


@cli.command()
@click.option("--preset", "-p", multiple=True, help="Preset name (default: all presets)")
def params(preset):
    """Print parameter counts of model presets."""

    app = SanmApp()

    try:
        app.print_parameter_counts(app.parameter_counts(list(preset) or None))
    except KeyError as e:
        fail("counting parameters", ConfigurationError(str(e)))


@cli.command()
def config():
    """Show current configuration."""

    click.echo("🔧 Current Configuration:")
    click.echo("=" * 30)
    click.echo(f"Log Level: {settings.log_level}")
    click.echo(f"Seed: {settings.seed}")
    click.echo(f"Output Directory: {Path(settings.output_dir)}")
    click.echo(f"Benchmark Repetitions: {settings.bench_reps}")
    click.echo(f"Held-out Corpus: {settings.heldout_corpus}")


if __name__ == '__main__':
    cli()
