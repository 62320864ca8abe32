"""Report generation: benchmark and evaluation reports, attention/filter exports."""

import io
import json
import logging
from pathlib import Path
from typing import List, Union

import numpy as np

from .models import AnalysisDump, BenchReport, EvalReport

logger = logging.getLogger(__name__)

Report = Union[BenchReport, EvalReport]


def format_value(value: float) -> str:
    return f"{value:.17g}"


def matrix_to_csv(matrix: np.ndarray) -> str:
    buffer = io.StringIO()
    np.savetxt(buffer, np.atleast_2d(np.asarray(matrix, dtype=np.float64)), delimiter=",", fmt="%.17g")
    return buffer.getvalue()


def read_matrix_csv(path: Union[str, Path]) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def render_pgm(matrix: np.ndarray) -> bytes:
    """Binary 8-bit grayscale image, white = largest entry."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    peak = matrix.max()
    scaled = matrix / peak if peak > 0 else np.zeros_like(matrix)
    pixels = np.clip(np.rint(255.0 * scaled), 0, 255).astype(np.uint8)
    height, width = pixels.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


class ReportGenerator:
    """Generates formatted reports and analysis exports."""

    def generate_markdown_report(self, report: Report) -> str:
        if isinstance(report, BenchReport):
            return self._bench_markdown(report)
        return self._eval_markdown(report)

    def _bench_markdown(self, report: BenchReport) -> str:
        lines = []
        lines.append("# Sub-layer Scaling Benchmark")
        lines.append("")
        lines.append(f"**Width d**: {report.d}")
        lines.append(f"**Generated**: {report.generated_at.strftime('%Y-%m-%d %H:%M:%S')}")
        lines.append("")

        lines.append("## Log-log Slopes")
        lines.append("")
        for kind, slope in report.slopes.items():
            lines.append(f"- **{kind}**: {slope:.3f}")
        lines.append("")

        lines.append("## Median Forward Time")
        lines.append("")
        lines.append("| kind | length | median (s) | reps | calls per rep |")
        lines.append("|------|--------|------------|------|---------------|")
        for p in report.points:
            lines.append(f"| {p.kind} | {p.length} | {p.median_seconds:.6g} | {p.reps} | {p.number} |")
        return "\n".join(lines)

    def _eval_markdown(self, report: EvalReport) -> str:
        lines = []
        lines.append("# Greedy Decoding Evaluation")
        lines.append("")
        lines.append(f"**Checkpoint**: {report.checkpoint}")
        lines.append(f"**Corpus**: {report.corpus}")
        lines.append(f"**Utterances**: {len(report.results)}")
        lines.append(f"**Corpus CER**: {100 * report.corpus_cer:.2f}%")
        lines.append("")

        worst = sorted(report.results, key=lambda r: r.cer, reverse=True)[:5]
        if worst and worst[0].cer > 0:
            lines.append("## Highest CER Utterances")
            lines.append("")
            for r in worst:
                if r.cer > 0:
                    lines.append(f"- **{r.utt_id}**: {100 * r.cer:.1f}% ({r.edits} edits / {len(r.reference)} tokens)")
                    if r.transcript:
                        lines.append(f"  - hypothesis: `{r.transcript}`")
        return "\n".join(lines)

    def generate_json_report(self, report: Report) -> str:
        return json.dumps(report.model_dump(mode="json"), indent=2)

    def generate_csv_report(self, report: Report) -> str:
        lines = []
        if isinstance(report, BenchReport):
            lines.append("kind,length,median_seconds,reps,number")
            for p in report.points:
                lines.append(f"{p.kind},{p.length},{format_value(p.median_seconds)},{p.reps},{p.number}")
        else:
            lines.append("utt_id,edits,reference_tokens,cer,hypothesis,reference")
            for r in report.results:
                lines.append(f"{r.utt_id},{r.edits},{len(r.reference)},{format_value(r.cer)},"
                             f"{' '.join(map(str, r.hypothesis))},{' '.join(map(str, r.reference))}")
        return "\n".join(lines) + "\n"

    def save_report(self, report: Report, output_path: Union[str, Path], format: str = "markdown") -> Path:
        """Save a report to a file."""
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)

        if format.lower() == "markdown":
            content = self.generate_markdown_report(report)
            if not output_path.suffix:
                output_path = output_path.with_suffix(".md")
        elif format.lower() == "json":
            content = self.generate_json_report(report)
            if not output_path.suffix:
                output_path = output_path.with_suffix(".json")
        elif format.lower() == "csv":
            content = self.generate_csv_report(report)
            if not output_path.suffix:
                output_path = output_path.with_suffix(".csv")
        else:
            raise ValueError(f"Unsupported format: {format}")

        output_path.write_text(content, encoding="utf-8")
        logger.info("report saved to %s", output_path)
        return output_path

    def write_analysis(self, dump: AnalysisDump, out_dir: Union[str, Path]) -> List[Path]:
        """One CSV and one PGM per attention map, one CSV per filter, plus summary.json."""
        out_dir = Path(out_dir) / dump.utterance_id
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for m in dump.attention:
            stem = f"attention_{m.stack}_{m.layer}"
            written.append(self._write(out_dir / f"{stem}.csv", matrix_to_csv(m.weights)))
            written.append(self._write(out_dir / f"{stem}.pgm", render_pgm(m.weights)))
            if m.per_head is not None:
                for h, head in enumerate(m.per_head):
                    written.append(self._write(out_dir / f"{stem}_head{h}.csv", matrix_to_csv(head)))
        for f in dump.filters:
            written.append(self._write(out_dir / f"filter_{f.stack}_{f.layer}.csv", matrix_to_csv(f.taps)))

        summary = {
            "utterance_id": dump.utterance_id,
            "generated_at": dump.generated_at.isoformat(),
            "attention": [{"name": m.name, "rows": int(m.weights.shape[0]), "cols": int(m.weights.shape[1])}
                          for m in dump.attention],
            "filters": [{"stack": f.stack, "layer": f.layer, "n1": f.n1, "n2": f.n2} for f in dump.filters],
            "diagonal_mass": dump.diagonal_mass,
            "future_mass": dump.future_mass,
        }
        written.append(self._write(out_dir / "summary.json", json.dumps(summary, indent=2)))
        return written

    @staticmethod
    def _write(path: Path, content: Union[str, bytes]) -> Path:
        if isinstance(content, bytes):
            path.write_bytes(content)
        else:
            path.write_text(content, encoding="utf-8")
        return path
