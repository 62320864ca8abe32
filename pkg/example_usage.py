#!/usr/bin/env python3
"""Example usage of the SAN-M toolkit."""

import sys
from pathlib import Path

# Add src directory to Python path
src_path = Path(__file__).parent / "src"
sys.path.insert(0, str(src_path))

from src.app import SanmApp
from src.config import build_run_config
from src.logging_setup import configure_logging


def main():
    """Train a small SAN-M model, decode the held-out split and export its attention maps."""

    print("🚀 SAN-M - Example Usage")
    print("=" * 50)

    try:
        configure_logging("INFO")
        app = SanmApp(output_dir="example_run")

        # Parameter counts of the published configurations
        print("\n📐 Parameter counts:")
        app.print_parameter_counts(app.parameter_counts(
            ["aishell_san_san", "aishell_dfsmn_dfsmn", "aishell_sanm_dfsmn"]))

        # A short run of the desk preset
        print("\n🏋️ Training desk_sanm for 300 steps...")
        run = build_run_config({"preset": "desk_sanm", "max_steps": "300", "train_utterances": "100",
                                "log_every": "50", "checkpoint_every": "100"})
        result = app.train(run, "example_run/train")
        app.print_train_summary(result)

        # Held-out corpus with the same task seed
        print("\n📁 Writing held-out corpus...")
        corpora = app.generate("example_run/data", run.task, train_count=0, heldout_count=20)

        # Greedy decoding and CER
        print("\n📊 Evaluating...")
        report = app.evaluate(result.checkpoint, corpora["heldout"], workers=2,
                              output_path="example_run/eval.md", format="markdown")
        app.print_eval_summary(report)

        # Attention maps and memory filters for one utterance
        print("\n🖼️ Exporting analysis for heldout-00000...")
        dump = app.visualize(result.checkpoint, corpora["heldout"], "heldout-00000", "example_run/viz")
        app.print_analysis_summary(dump)

        print("\n🎉 Example completed successfully!")
        print("\nNext steps:")
        print("1. Try different commands: python main.py --help")
        print("2. Compare sub-layer kinds with the desk_san and desk_dfsmn presets")
        print("3. Run the scaling benchmark: python main.py bench --kinds san,fir")

    except Exception as e:
        print(f"❌ Error: {e}")
        print("\nTroubleshooting:")
        print("1. Make sure the dependencies in requirements.txt are installed")
        print("2. Check your .env file (SANM_LOG_LEVEL, SANM_SEED, SANM_OUTPUT_DIR, SANM_BENCH_REPS)")
        print("3. Run 'python main.py config' to see the active settings")


if __name__ == "__main__":
    main()
