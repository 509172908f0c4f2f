"""fume/harness/cli.py

``fume`` command group: generate, train, eval, bench, count, ablate.

Every command reads the flat run-config file given with ``--config``
(defaults apply without one). Failures exit with the code of their error
class: 2 config, 3 data, 4 numeric, 5 checkpoint.
"""

import functools
import logging
import sys
from pathlib import Path

import click

from fume import configure_logging
from fume.config.settings import load_run_config, parse_counts
from fume.errors import FumeError, handle_error
from fume.harness.ablation import ablation_sweep
from fume.harness.evaluation import evaluate
from fume.harness.training import TrainConfig, train_loop
from fume.metrics.efficiency import bench_latency, efficiency_table
from fume.net.checkpoint import load_checkpoint
from fume.net.model import build
from fume.net.variants import ModelVariantConfig
from fume.synthgas.dataset import SPLITS, build_dataset, load_manifest

logger = logging.getLogger(__name__)

config_option = click.option(
    "--config", "config_path", type=click.Path(dir_okay=False), default=None,
    help="Run configuration file (key = value per line).",
)
out_option = click.option("--out", "out", type=click.Path(file_okay=False), default=None,
                          help="Output directory (overrides the config).")


def reports_errors(func):
    """Turn a FumeError into a logged message and the error's exit code."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except FumeError as err:
            handle_error(err)
            click.echo(f"Error: {err.message}", err=True)
            sys.exit(err.exit_code)
    return wrapper


@click.group()
@click.option("--log-level", default=None, help="Override the configured log level.")
def cli(log_level):
    """FUME dual-gas segmentation and acidosis classification toolkit."""
    from fume.config.settings import get_settings

    settings = get_settings()
    if log_level:
        settings = type("CliSettings", (settings,), {"LOG_LEVEL": log_level.upper()})
    configure_logging(settings)


@cli.command()
@config_option
@out_option
@click.option("--workers", type=int, default=1, show_default=True, help="Rendering threads.")
@reports_errors
def generate(config_path, out, workers):
    """Generate the synthetic dual-gas dataset."""
    cfg = load_run_config(config_path, dataset=out)
    manifest = build_dataset(parse_counts(cfg.counts_per_ph), cfg.seed, cfg.dataset,
                             size=cfg.image_size, session_length=cfg.session_length, workers=workers)
    sizes = manifest.split_sizes()
    click.echo(f"Wrote {len(manifest)} samples to {cfg.dataset} "
               f"(train {sizes['train']}, val {sizes['val']}, test {sizes['test']})")


@cli.command()
@config_option
@out_option
@reports_errors
def train(config_path, out):
    """Train the configured variant and keep the best checkpoint."""
    cfg = load_run_config(config_path, out_dir=out)
    run = train_loop(TrainConfig.from_run_config(cfg))
    click.echo(f"Best epoch {run.best_epoch}/{len(run.epochs)}, checkpoint {run.checkpoint}")


@cli.command(name="eval")
@config_option
@click.option("--checkpoint", type=click.Path(dir_okay=False), required=True, help="Checkpoint to evaluate.")
@click.option("--split", type=click.Choice(SPLITS), default="test", show_default=True)
@out_option
@reports_errors
def eval_command(config_path, checkpoint, split, out):
    """Evaluate a checkpoint and write report.txt / report.csv."""
    cfg = load_run_config(config_path, out_dir=out)
    net = load_checkpoint(checkpoint)
    report = evaluate(net, load_manifest(cfg.dataset), split,
                      batch_size=cfg.eval_batch_size, macs_size=cfg.macs_size)
    path = report.write(cfg.out_dir)
    click.echo(report.to_text(), nl=False)
    click.echo(f"Report written to {path}")


@cli.command()
@config_option
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None,
              help="Checkpoint to time; the configured variant at its seed otherwise.")
@out_option
@reports_errors
def bench(config_path, checkpoint, out):
    """Measure single-sample latency at the bench resolution."""
    cfg = load_run_config(config_path, out_dir=out)
    net = load_checkpoint(checkpoint) if checkpoint else build(cfg.variant, cfg.seed, dtype=cfg.precision)
    size = cfg.bench_size
    result = bench_latency(net, (1, 2, size, size), warmup=cfg.bench_warmup,
                           iterations=cfg.bench_iterations, seed=cfg.seed)
    text = (f"variant={net.config.name}\nsize={size}\nwarmup={result.warmup}\n"
            f"iterations={result.iterations}\nlatency_ms={result.latency_ms:.6f}\nfps={result.fps:.6f}\n")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "bench.txt").write_text(text, encoding="utf-8")
    click.echo(text, nl=False)


@cli.command()
@config_option
@click.option("--variant", default=None, help="Count one variant instead of all seven.")
@out_option
@reports_errors
def count(config_path, variant, out):
    """Parameters and MACs per variant at the configured MAC resolution."""
    cfg = load_run_config(config_path)
    variants = [ModelVariantConfig.parse(variant).name] if variant else None
    rows = efficiency_table(cfg.macs_size, cfg.seed, variants)
    lines = ["variant,params,macs,params_m,macs_g"]
    lines += [f"{r.variant},{r.params},{r.macs},{r.params_m:.6f},{r.macs_g:.6f}" for r in rows]
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "efficiency.csv").write_text(text, encoding="utf-8")
    click.echo(text, nl=False)


@cli.command()
@config_option
@out_option
@reports_errors
def ablate(config_path, out):
    """Train and evaluate every variant; write ablation.csv."""
    cfg = load_run_config(config_path, out_dir=out)
    path = ablation_sweep(cfg)
    click.echo(path.read_text(encoding="utf-8"), nl=False)
    click.echo(f"Ablation table written to {path}")
