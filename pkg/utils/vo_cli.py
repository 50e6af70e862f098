import logging
import logging.config
from contextlib import contextmanager
from pathlib import Path

import click

from memvo_app.models.vo_model import ATTENTION_MODES
from memvo_repo.settings import load_settings
from utils.evaluation import ATE_ALIGNMENTS, METRIC_NAMES
from utils.training import load_run_config, run_train, run_infer, run_eval, run_sweep, sweep_table_lines


logger = logging.getLogger(__name__)


@contextmanager
def _command_errors(command_name):
    # turns our RuntimeErrors into click errors so the exit code is nonzero
    try:
        yield
    except RuntimeError as rte:
        logger.error(f"{command_name}: error: {rte}")
        raise click.ClickException(f"{command_name}: {rte}")


def _run_overrides(output_dir, iterations=None, seed=None):
    overrides = {}
    if output_dir:
        overrides['output_dir'] = output_dir
    if iterations is not None:
        overrides['iterations'] = iterations
    if seed is not None:
        overrides['seed'] = seed
    return overrides


#
# ---- application ----
#

@click.group()
@click.option('--settings', 'settings_name', type=click.STRING, default=None,
              help="settings module: 'base', 'kitti', 'tum', 'toy', or a dotted path. "
                   "default: $MEMVO_SETTINGS_MODULE")
@click.pass_context
def vo_cli_app(ctx, settings_name):
    """
    Memory-augmented visual odometry: training, inference, evaluation, and parameter sweeps.
    """
    with _command_errors('memvo'):
        settings = load_settings(settings_name)
    logging.config.dictConfig(settings.LOGGING)
    ctx.obj = settings


@vo_cli_app.command()
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON or YAML run config merged over the settings' defaults")
@click.option('--output-dir', type=click.Path(file_okay=False), default=None)
@click.option('--iterations', type=click.IntRange(min=0), default=None)
@click.option('--seed', type=click.INT, default=None)
@click.pass_obj
def train(settings, config_path, output_dir, iterations, seed):
    """
    Trains a model and writes its checkpoint, training log, and summary.
    """
    with _command_errors('train'):
        run_config = load_run_config(config_path, settings, _run_overrides(output_dir, iterations, seed))
        result = run_train(run_config)
    click.echo(f"checkpoint: {result.output_dir / 'checkpoint.json'}")
    for key, value in result.summary.items():
        click.echo(f"{key}: {value}")


@vo_cli_app.command()
@click.option('--checkpoint', 'checkpoint_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--input', 'source', type=click.STRING, required=True,
              help="'synthetic' for the run's held-out synthetic sequences, or a dataset manifest path")
@click.option('--ablation', type=click.Choice(ATTENTION_MODES), default=None,
              help="attention mode to run. default: the checkpoint's")
@click.option('--split', type=click.STRING, default='test', show_default=True, help="manifest split to run")
@click.option('--data-root', type=click.Path(file_okay=False), default=None,
              help="directory that manifest pose and feature paths are relative to")
@click.option('--output-dir', type=click.Path(file_okay=False), default=None,
              help="default: an 'infer' directory next to the checkpoint")
def infer(checkpoint_path, source, ablation, split, data_root, output_dir):
    """
    Runs a checkpoint over a sequence source and writes trajectory files and memory diagnostics.
    """
    output_dir = output_dir or str(Path(checkpoint_path).parent / 'infer')
    with _command_errors('infer'):
        id_to_trajectory = run_infer(checkpoint_path, source, output_dir, ablation, split, data_root)
    click.echo(f"wrote {len(id_to_trajectory)} trajectories to {output_dir}")


@vo_cli_app.command(name='eval')
@click.option('--est', 'est_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--ref', 'ref_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--kitti', 'use_kitti', is_flag=True, help="KITTI segment errors (t_rel, r_rel)")
@click.option('--ate', 'use_ate', is_flag=True, help="absolute trajectory error")
@click.option('--rpe', 'use_rpe', is_flag=True, help="relative pose error per second")
@click.option('--alignment', type=click.Choice(ATE_ALIGNMENTS), default=None,
              help="ATE alignment. default: the settings' ATE_ALIGNMENT")
@click.option('--json', 'json_path', type=click.Path(dir_okay=False), default=None,
              help="report JSON file. default: <est>.metrics.json")
@click.option('--curves', 'curves_path', type=click.Path(dir_okay=False), default=None,
              help="also write per-frame positions as CSV")
@click.pass_obj
def eval_command(settings, est_path, ref_path, use_kitti, use_ate, use_rpe, alignment, json_path, curves_path):
    """
    Evaluates an estimated trajectory file against a reference. With no metric flags, all metrics are computed.
    """
    metrics = [metric for metric, is_on in zip(['kitti', 'ate', 'rpe'], [use_kitti, use_ate, use_rpe]) if is_on] \
              or list(METRIC_NAMES)
    with _command_errors('eval'):
        report = run_eval(est_path, ref_path, metrics, alignment or settings.ATE_ALIGNMENT, settings, json_path,
                          curves_path)
    click.echo(report.as_table())


@vo_cli_app.command()
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--axis', type=click.Choice(['sequence_length', 'thresholds', 'ablations']), required=True)
@click.option('--output-dir', type=click.Path(file_okay=False), default=None)
@click.option('--iterations', type=click.IntRange(min=0), default=None)
@click.pass_obj
def sweep(settings, config_path, axis, output_dir, iterations):
    """
    Trains and evaluates one run per value of a sweep axis and prints the comparison table.
    """
    with _command_errors('sweep'):
        run_config = load_run_config(config_path, settings, _run_overrides(output_dir, iterations))
        rows = run_sweep(run_config, axis, settings=settings)
    click.echo('\n'.join(sweep_table_lines(axis, rows)))


#
# ---- main ----
#

if __name__ == '__main__':
    vo_cli_app()
