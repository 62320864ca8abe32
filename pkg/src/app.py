"""Main application class for the SAN-M toolkit."""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from rich.console import Console
from rich.table import Table

from .analysis import bench_scaling, corpus_cer, decode_corpus, dump_analysis
from .checkpoint import load_checkpoint
from .config import RunConfig, load_run_config, settings
from .errors import ConfigurationError, EmptyReferenceError
from .frontend import generate_corpus, read_feature_file, write_feature_file
from .model import count_parameters
from .models import (MODEL_PRESETS, RESERVED_TOKENS, AnalysisDump, BenchReport, EvalReport, FeatureSpec,
                     ModelConfig, SyntheticTask, TrainResult, Vocabulary)
from .report_generator import ReportGenerator
from .trainer import Trainer

logger = logging.getLogger(__name__)

# published model sizes in millions, for the params command
REFERENCE_COUNTS = {"aishell_san_san": 46, "aishell_dfsmn_dfsmn": 37, "aishell_sanm_dfsmn": 43}


def feature_spec_for(cfg: ModelConfig) -> FeatureSpec:
    """The stacking layout implied by a model's input width."""
    window = FeatureSpec().window
    if cfg.input_dim % window:
        raise ConfigurationError(f"input_dim={cfg.input_dim} is not a multiple of the {window}-frame window")
    return FeatureSpec(base_dim=cfg.input_dim // window)


class SanmApp:
    """Orchestrates training, evaluation, analysis and benchmarking."""

    def __init__(self, output_dir: Optional[Union[str, Path]] = None, console: Optional[Console] = None):
        self.output_dir = Path(output_dir or settings.output_dir)
        self.console = console or Console()
        self.report_generator = ReportGenerator()

    def train(self, config: Union[str, Path, RunConfig], out_dir: Optional[Union[str, Path]] = None) -> TrainResult:
        run = config if isinstance(config, RunConfig) else load_run_config(config)
        out_dir = Path(out_dir) if out_dir else self.output_dir / "train"
        trainer = Trainer(run.model, run.train, run.schedule, run.task, out_dir)
        return trainer.run()

    def generate(self, out_dir: Union[str, Path], task: Optional[SyntheticTask] = None,
                 train_count: int = 500, heldout_count: int = 100) -> Dict[str, Path]:
        """Write disjoint train and heldout corpus files."""
        task = task or SyntheticTask(seed=settings.seed)
        out_dir = Path(out_dir)
        written = {}
        for split, count in (("train", train_count), ("heldout", heldout_count)):
            if count < 1:
                continue
            path = out_dir / f"{split}.feats"
            write_feature_file(path, generate_corpus(task, count, split), task.base_dim)
            written[split] = path
            logger.info("wrote %d %s utterances to %s", count, split, path)
        return written

    def evaluate(self, checkpoint: Union[str, Path], corpus: Union[str, Path], workers: int = 1,
                 output_path: Optional[str] = None, format: str = "markdown") -> EvalReport:
        ckpt = load_checkpoint(checkpoint)
        spec = feature_spec_for(ckpt.params.config)
        utterances = read_feature_file(corpus, expected_dim=spec.base_dim)
        if not utterances:
            raise EmptyReferenceError(f"corpus {corpus} has no utterances")
        vocabulary = Vocabulary.synthetic(ckpt.params.config.vocab_size - len(RESERVED_TOKENS))
        results = decode_corpus(ckpt.params, utterances, spec, workers=workers, vocabulary=vocabulary)
        report = EvalReport(checkpoint=str(checkpoint), corpus=str(corpus), results=results,
                            corpus_cer=corpus_cer(results))
        if output_path:
            self.report_generator.save_report(report, output_path, format=format)
        return report

    def visualize(self, checkpoint: Union[str, Path], corpus: Union[str, Path], utt_id: Optional[str],
                  out_dir: Union[str, Path], per_head: bool = False, mirror: bool = False) -> AnalysisDump:
        ckpt = load_checkpoint(checkpoint)
        spec = feature_spec_for(ckpt.params.config)
        utterances = read_feature_file(corpus, expected_dim=spec.base_dim)
        if not utterances:
            raise EmptyReferenceError(f"corpus {corpus} has no utterances")
        matches = [u for u in utterances if utt_id is None or u.utt_id == utt_id]
        if not matches:
            raise ConfigurationError(f"utterance {utt_id!r} not found in {corpus}")
        return dump_analysis(ckpt.params, matches[0], out_dir, spec, per_head=per_head, mirror=mirror)

    def bench(self, kinds: Sequence[str], lengths: Sequence[int], d: int = 64, reps: Optional[int] = None,
              output_path: Optional[str] = None, format: str = "markdown") -> BenchReport:
        report = bench_scaling(kinds, lengths, d=d, reps=reps or settings.bench_reps, seed=settings.seed)
        if output_path:
            self.report_generator.save_report(report, output_path, format=format)
        return report

    def parameter_counts(self, presets: Optional[List[str]] = None) -> Dict[str, int]:
        names = presets or list(MODEL_PRESETS)
        return {name: count_parameters(ModelConfig.preset(name)) for name in names}

    def print_train_summary(self, result: TrainResult) -> None:
        table = Table(title="Training Summary")
        table.add_column("Field")
        table.add_column("Value")
        table.add_row("Steps", str(result.steps))
        if result.initial_loss is not None:
            table.add_row("Initial loss", f"{result.initial_loss:.4f}")
            table.add_row("Final loss", f"{result.final_loss:.4f}")
        table.add_row("Checkpoint", result.checkpoint)
        table.add_row("Metrics log", result.metrics_log)
        self.console.print(table)

    def print_eval_summary(self, report: EvalReport) -> None:
        perfect = sum(1 for r in report.results if r.edits == 0)
        self.console.print(f"Utterances: {len(report.results)} ({perfect} decoded exactly)")
        self.console.print(f"Corpus CER: [bold]{100 * report.corpus_cer:.2f}%[/bold]")

    def print_bench_summary(self, report: BenchReport) -> None:
        table = Table(title=f"Forward time scaling (d={report.d})")
        table.add_column("kind")
        table.add_column("length", justify="right")
        table.add_column("median (ms)", justify="right")
        for p in report.points:
            table.add_row(p.kind, str(p.length), f"{1e3 * p.median_seconds:.3f}")
        self.console.print(table)
        for kind, slope in report.slopes.items():
            self.console.print(f"{kind}: log-log slope [bold]{slope:.2f}[/bold]")

    def print_analysis_summary(self, dump: AnalysisDump) -> None:
        table = Table(title=f"Attention analysis: {dump.utterance_id}")
        table.add_column("layer")
        table.add_column("diagonal mass", justify="right")
        table.add_column("future mass", justify="right")
        for name, mass in dump.diagonal_mass.items():
            table.add_row(name, f"{mass:.3f}", f"{dump.future_mass.get(name, 0.0):.3f}")
        self.console.print(table)
        self.console.print(f"{len(dump.attention)} attention maps, {len(dump.filters)} memory filters exported")

    def print_parameter_counts(self, counts: Dict[str, int]) -> None:
        table = Table(title="Learnable parameters")
        table.add_column("preset")
        table.add_column("count (M)", justify="right")
        table.add_column("reference (M)", justify="right")
        for name, count in counts.items():
            reference = REFERENCE_COUNTS.get(name)
            table.add_row(name, f"{count / 1e6:.2f}", str(reference) if reference else "-")
        self.console.print(table)
