import json
import math
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
import yaml
from click.testing import CliRunner
from numpy.testing import assert_allclose, assert_array_equal

from memvo_app.models.pose import Trajectory
from memvo_app.models.run_config import RunConfig
from memvo_app.models.vo_model import VoModel
from memvo_app.tests.test_pose_io import TRAJECTORIES_DIR
from memvo_repo.settings import load_settings
from utils.checkpoint import read_checkpoint
from utils.geometry import compose, pose_to_matrix
from utils.network import forward_sequence
from utils.pose_io import read_trajectory_file
from utils.synthetic import synth_generate
from utils.tensor import constant
from utils.training import load_run_config, load_dataset, run_train, load_model, infer_trajectory, run_infer, \
    run_eval, run_sweep, axis_overrides, sweep_table_lines, estimated_trajectory, validation_metrics, \
    held_out_ate, TRAIN_LOG_FILE_NAME, CHECKPOINT_FILE_NAME, SUMMARY_FILE_NAME, RESOLVED_CONFIG_FILE_NAME, \
    DIAGNOSTICS_FILE_NAME
from utils.utilities import ConfigError, TrainingError, CheckpointLoadError
from utils.vo_cli import vo_cli_app


TINY_CONFIG = {'model': {'feature_channels': 6, 'feature_height': 2, 'feature_width': 2, 'hidden_channels': 6,
                         'fusion_channels': 4},
               'synthetic': {'seed': 3, 'num_sequences': 6, 'noise_sigma': 0.01},
               'sequence_length': 4,
               'batch_size': 2,
               'iterations': 3,
               'checkpoint_interval': 2,
               'num_validation': 2,
               'optimizer': {'lr': 1e-3, 'halving_interval': 2}}


def tiny_run_config(output_dir, **overrides):
    return RunConfig().with_overrides({**TINY_CONFIG, 'output_dir': str(output_dir), **overrides})


def assert_same_poses(test_case, exp_poses, act_poses, atol=1e-9):
    test_case.assertEqual(len(exp_poses), len(act_poses))
    for exp_pose, act_pose in zip(exp_poses, act_poses):
        assert_allclose(pose_to_matrix(exp_pose), pose_to_matrix(act_pose), rtol=0, atol=atol)


class LoadRunConfigTestCase(unittest.TestCase):
    """
    """


    def test_file_and_overrides(self):
        toy_settings = load_settings('toy')
        with tempfile.TemporaryDirectory() as temp_dir:
            config_path = Path(temp_dir) / 'run.yaml'
            with open(config_path, 'w') as config_fp:
                yaml.safe_dump({'model': {'theta_trans': 1.5}, 'batch_size': 3}, config_fp)
            run_config = load_run_config(config_path, toy_settings, {'seed': 9})
            self.assertEqual(1.5, run_config.model.theta_trans)
            self.assertEqual(0.005, run_config.model.theta_rot)
            self.assertEqual(3, run_config.batch_size)
            self.assertEqual(9, run_config.seed)
            self.assertEqual(toy_settings.NUM_ITERATIONS, run_config.iterations)

            # a resolved snapshot reproduces its config
            snapshot_path = Path(temp_dir) / 'resolved.json'
            snapshot_path.write_text(json.dumps(run_config.to_dict()))
            self.assertEqual(run_config, load_run_config(snapshot_path, load_settings('tum')))


    def test_profile_snapshots_reload(self):
        # JSON writes small floats without a decimal point, e.g., eps as 1e-08
        with tempfile.TemporaryDirectory() as temp_dir:
            for profile_name in ['base', 'kitti', 'tum', 'toy']:
                settings = load_settings(profile_name)
                run_config = RunConfig.from_settings(settings)
                snapshot_path = Path(temp_dir) / f"{profile_name}-resolved.json"
                with open(snapshot_path, 'w') as snapshot_fp:
                    json.dump(run_config.to_dict(), snapshot_fp, indent=2, sort_keys=True)
                self.assertIn('1e-08', snapshot_path.read_text())
                self.assertEqual(run_config, load_run_config(snapshot_path, settings), msg=profile_name)


    def test_yaml_numbers(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            config_path = Path(temp_dir) / 'run.yml'
            config_path.write_text('optimizer: {lr: 1e-3, eps: 1e-8}\nbatch_size: 2.0\nmodel: {buffer_capacity: 4}\n')
            run_config = load_run_config(config_path, load_settings('toy'))
            self.assertEqual(1e-3, run_config.optimizer.lr)
            self.assertIsInstance(run_config.optimizer.lr, float)
            self.assertEqual(1e-8, run_config.optimizer.eps)
            self.assertEqual(2, run_config.batch_size)
            self.assertIsInstance(run_config.batch_size, int)
            self.assertEqual(4, run_config.model.buffer_capacity)


    def test_errors(self):
        toy_settings = load_settings('toy')
        with tempfile.TemporaryDirectory() as temp_dir:
            config_path = Path(temp_dir) / 'run.yaml'
            for bad_text in ['[1, 2]', 'model: {bogus: 1}', 'batch_size: [unclosed', 'optimizer: {lr: fast}',
                             'batch_size: 2.5', 'model: {theta_rot: [1]}']:
                config_path.write_text(bad_text)
                with self.assertRaises(ConfigError, msg=bad_text):
                    load_run_config(config_path, toy_settings)
        with self.assertRaises(ConfigError):
            load_run_config('memvo_app/tests/no-such-config.yaml', toy_settings)


class DatasetTestCase(unittest.TestCase):
    """
    """


    def test_synthetic_split(self):
        train_samples, validation_samples = load_dataset(tiny_run_config('unused'))
        self.assertEqual(4, len(train_samples))
        self.assertEqual(['synthetic-3-0004', 'synthetic-3-0005'], [sample.id for sample in validation_samples])
        self.assertEqual(4, train_samples[0].num_frames())

        with self.assertRaises(ConfigError):
            load_dataset(tiny_run_config('unused', num_validation=6))


    def test_manifest_source(self):
        run_config = tiny_run_config('unused', manifest_path=str(TRAJECTORIES_DIR / 'tiny-manifest.json'),
                                     sequence_length=3, snippet_policy='stride', snippet_stride=3, num_validation=1)
        train_samples, validation_samples = load_dataset(run_config)
        self.assertEqual(['straight:0'], [sample.id for sample in train_samples])
        self.assertEqual(['straight:3'], [sample.id for sample in validation_samples])


class RunTrainTestCase(unittest.TestCase):
    """
    """


    def test_zero_iterations_keeps_initialization(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            run_config = tiny_run_config(temp_dir, iterations=0)
            result = run_train(run_config)
            _, path_to_array = read_checkpoint(Path(temp_dir) / CHECKPOINT_FILE_NAME)
            init_model = VoModel.initialize(run_config.model, run_config.seed)
            for param_path, tensor in init_model.named_parameters().items():
                assert_array_equal(tensor.data, path_to_array[param_path])
            self.assertEqual('', (Path(temp_dir) / TRAIN_LOG_FILE_NAME).read_text())
            self.assertEqual(0, result.summary['iterations'])
            self.assertEqual(result.summary['initial_validation_loss'], result.summary['final_validation_loss'])
            with open(Path(temp_dir) / RESOLVED_CONFIG_FILE_NAME) as config_fp:
                self.assertEqual(run_config, RunConfig.from_dict(json.load(config_fp)))


    def test_outputs_and_schedule(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            result = run_train(tiny_run_config(temp_dir))
            output_dir = Path(temp_dir)
            self.assertEqual(output_dir, result.output_dir)
            self.assertTrue((output_dir / 'checkpoint-2.json').exists())
            self.assertFalse((output_dir / 'checkpoint-3.json').exists())

            with open(output_dir / TRAIN_LOG_FILE_NAME) as log_fp:
                log_dicts = [json.loads(line) for line in log_fp]
            self.assertEqual([1, 2, 3], [log_dict['iteration'] for log_dict in log_dicts])
            self.assertEqual([1e-3, 1e-3, 5e-4], [log_dict['lr'] for log_dict in log_dicts])  # halved every 2
            for log_dict in log_dicts:
                self.assertAlmostEqual(log_dict['loss_local'] + log_dict['loss_global'], log_dict['loss_total'],
                                       delta=1e-9)

            with open(output_dir / SUMMARY_FILE_NAME) as summary_fp:
                summary = json.load(summary_fp)
            self.assertEqual(result.summary, summary)
            self.assertEqual({'iterations', 'num_train', 'num_validation', 'initial_validation_loss',
                              'final_validation_loss', 'initial_validation_ate', 'final_validation_ate',
                              'validation_memory_slots'}, set(summary))
            self.assertEqual((4, 2), (summary['num_train'], summary['num_validation']))
            self.assertGreaterEqual(summary['validation_memory_slots'], 1.0)

            # the checkpoint carries its own config
            run_config, model = load_model(output_dir / CHECKPOINT_FILE_NAME)
            self.assertEqual(tiny_run_config(temp_dir), run_config)
            for param_path, tensor in result.model.named_parameters().items():
                assert_array_equal(tensor.data, model.param(param_path).data)


    def test_deterministic(self):
        log_texts, path_to_arrays = [], []
        for _ in range(2):
            with tempfile.TemporaryDirectory() as temp_dir:
                run_train(tiny_run_config(temp_dir))
                log_texts.append((Path(temp_dir) / TRAIN_LOG_FILE_NAME).read_text())
                path_to_arrays.append(read_checkpoint(Path(temp_dir) / CHECKPOINT_FILE_NAME)[1])
        self.assertEqual(log_texts[0], log_texts[1])
        for param_path, array in path_to_arrays[0].items():
            assert_array_equal(array, path_to_arrays[1][param_path])


    def test_rerun_from_snapshot(self):
        file_names = [RESOLVED_CONFIG_FILE_NAME, TRAIN_LOG_FILE_NAME, 'checkpoint-2.json', CHECKPOINT_FILE_NAME,
                      SUMMARY_FILE_NAME]
        with tempfile.TemporaryDirectory() as temp_dir:
            output_dir = Path(temp_dir)
            run_train(tiny_run_config(temp_dir))
            file_name_to_bytes = {file_name: (output_dir / file_name).read_bytes() for file_name in file_names}

            # the snapshot alone (no overrides, other profile's defaults) reproduces every output
            run_train(load_run_config(output_dir / RESOLVED_CONFIG_FILE_NAME, load_settings('tum')))
            for file_name in file_names:
                self.assertEqual(file_name_to_bytes[file_name], (output_dir / file_name).read_bytes(),
                                 msg=file_name)


    def test_non_finite_loss(self):
        nan_losses = (constant(math.nan), constant(math.nan), constant(math.nan), None)
        with tempfile.TemporaryDirectory() as temp_dir, \
                patch('utils.training.sample_losses', return_value=nan_losses):
            with self.assertRaises(TrainingError):
                run_train(tiny_run_config(temp_dir, num_validation=0))


    def test_tracking_only_validation(self):
        run_config = tiny_run_config('unused', ablation='none')
        model = VoModel.initialize(run_config.model, 0)
        _, validation_samples = load_dataset(run_config)
        metrics = validation_metrics(model, validation_samples, run_config.loss_k)
        self.assertEqual(0.0, metrics['memory_slots'])
        self.assertGreater(metrics['loss_total'], 0.0)
        self.assertEqual({'loss_total': None, 'ate': None, 'memory_slots': None},
                         validation_metrics(model, [], run_config.loss_k))


    def test_held_out_ate_falls_back(self):
        sample = synth_generate(tiny_run_config('unused').synthetic)[0]
        reference = Trajectory(sample.gt_absolute)
        stationary = Trajectory([sample.gt_absolute[0]] * len(sample.gt_absolute))
        with self.assertLogs('utils.training', level='WARNING'):
            self.assertGreater(held_out_ate(stationary, reference), 0.0)
        self.assertAlmostEqual(0.0, held_out_ate(reference, reference), delta=1e-9)


class InferTestCase(unittest.TestCase):
    """
    """


    @classmethod
    def setUpClass(cls):
        cls.temp_dir = tempfile.TemporaryDirectory()
        cls.run_dir = Path(cls.temp_dir.name) / 'run'
        run_train(tiny_run_config(cls.run_dir, iterations=2))
        cls.checkpoint_path = cls.run_dir / CHECKPOINT_FILE_NAME


    @classmethod
    def tearDownClass(cls):
        cls.temp_dir.cleanup()


    def test_infer_trajectory_chunks(self):
        _, model = load_model(self.checkpoint_path)
        features = [constant(feature_map) for feature_map in np.random.default_rng(91).normal(size=(7, 6, 2, 2))]
        trajectory, chunk_diagnostics = infer_trajectory(model, features)
        self.assertEqual(8, len(trajectory))
        self.assertEqual([0, 3, 6], [diagnostics['first_pair'] for diagnostics in chunk_diagnostics])
        self.assertEqual(0, chunk_diagnostics[1]['stored_steps'][0])

        # each chunk starts from a fresh state and is chained onto the previous chunk's last pose
        second_chunk = forward_sequence(model, features[3:6])
        assert_same_poses(self, [compose(trajectory[3], pose) for pose in second_chunk.absolute_poses()],
                          trajectory.poses[4:7])

        whole_trajectory, chunk_diagnostics = infer_trajectory(model, features[:3])
        self.assertEqual(1, len(chunk_diagnostics))
        assert_same_poses(self, estimated_trajectory(forward_sequence(model, features[:3])).poses,
                          whole_trajectory.poses)


    def test_run_infer_synthetic(self):
        infer_dir = Path(self.temp_dir.name) / 'infer-synthetic'
        id_to_trajectory = run_infer(self.checkpoint_path, 'synthetic', infer_dir)
        self.assertEqual(['synthetic-3-0004', 'synthetic-3-0005'], sorted(id_to_trajectory))
        for file_name in ['synthetic-3-0004.kitti.txt', 'synthetic-3-0004.tum.txt', 'synthetic-3-0004.gt.kitti.txt',
                          'synthetic-3-0004.gt.tum.txt']:
            self.assertTrue((infer_dir / file_name).exists(), file_name)
        assert_same_poses(self, id_to_trajectory['synthetic-3-0004'].poses,
                          read_trajectory_file(infer_dir / 'synthetic-3-0004.tum.txt').poses)

        with open(infer_dir / DIAGNOSTICS_FILE_NAME) as diagnostics_fp:
            diagnostics = json.load(diagnostics_fp)
        self.assertEqual('full', diagnostics['attention_mode'])
        sequence_diagnostics = diagnostics['sequences']['synthetic-3-0004']
        self.assertEqual(4, sequence_diagnostics['num_frames'])
        self.assertEqual(1, len(sequence_diagnostics['chunks']))
        self.assertEqual(3, len(sequence_diagnostics['chunks'][0]['alpha_history']))


    def test_run_infer_tracking_only(self):
        infer_dir = Path(self.temp_dir.name) / 'infer-none'
        id_to_trajectory = run_infer(self.checkpoint_path, 'synthetic', infer_dir, attention_mode='none')
        _, model = load_model(self.checkpoint_path)
        sample = synth_generate(tiny_run_config('unused').synthetic)[-1]
        output = forward_sequence(model, sample.features, 'none')
        assert_same_poses(self, estimated_trajectory(output).poses, id_to_trajectory[sample.id].poses)
        with open(infer_dir / DIAGNOSTICS_FILE_NAME) as diagnostics_fp:
            self.assertEqual([], json.load(diagnostics_fp)['sequences'][sample.id]['chunks'][0]['stored_steps'])


    def test_run_infer_manifest(self):
        infer_dir = Path(self.temp_dir.name) / 'infer-manifest'
        id_to_trajectory = run_infer(self.checkpoint_path, str(TRAJECTORIES_DIR / 'tiny-manifest.json'), infer_dir)
        self.assertEqual(['turn'], list(id_to_trajectory))
        reference = read_trajectory_file(infer_dir / 'turn.gt.kitti.txt')
        assert_same_poses(self, read_trajectory_file(TRAJECTORIES_DIR / 'kitti-turn.txt').poses, reference.poses)


    def test_errors(self):
        with self.assertRaises(CheckpointLoadError):
            load_model('memvo_app/tests/no-such-checkpoint.json')
        with tempfile.TemporaryDirectory() as temp_dir:
            bad_path = Path(temp_dir) / 'checkpoint.json'
            with open(self.checkpoint_path) as checkpoint_fp:
                checkpoint = json.load(checkpoint_fp)
            checkpoint['config']['ablation'] = 'bogus'
            bad_path.write_text(json.dumps(checkpoint))
            with self.assertRaises(CheckpointLoadError):
                load_model(bad_path)
        with self.assertRaises(ConfigError):
            run_infer(self.checkpoint_path, 'synthetic', Path(self.temp_dir.name) / 'infer-bad', 'bogus')


    def test_run_eval(self):
        infer_dir = Path(self.temp_dir.name) / 'infer-eval'
        run_infer(self.checkpoint_path, 'synthetic', infer_dir)
        gt_path = infer_dir / 'synthetic-3-0004.gt.tum.txt'
        report = run_eval(gt_path, gt_path, ['ate', 'rpe', 'kitti'], 'none', load_settings('toy'))
        self.assertEqual(0.0, report.ate_rmse)
        self.assertIsNone(report.rpe_rmse)  # 0.3 s is shorter than the 1 s delta
        self.assertIsNone(report.t_rel)
        with open(infer_dir / 'synthetic-3-0004.gt.tum.metrics.json') as json_fp:
            report_dict = json.load(json_fp)
        self.assertEqual(str(gt_path), report_dict['reference'])
        self.assertEqual(0.0, report_dict['ate_rmse'])

        est_path = infer_dir / 'synthetic-3-0004.kitti.txt'
        json_path, curves_path = infer_dir / 'eval' / 'report.json', infer_dir / 'eval' / 'curves.csv'
        report = run_eval(est_path, infer_dir / 'synthetic-3-0004.gt.kitti.txt', ['ate'], 'none', load_settings('toy'),
                          json_path, curves_path)
        self.assertGreater(report.ate_rmse, 0.0)
        self.assertTrue(json_path.exists())
        self.assertEqual(5, len(curves_path.read_text().splitlines()))


class SweepTestCase(unittest.TestCase):
    """
    """


    def test_axis_overrides(self):
        self.assertEqual({'sequence_length': 5}, axis_overrides('sequence_length', 5))
        self.assertEqual({'model': {'theta_rot': 0.005, 'theta_trans': 0.6}},
                         axis_overrides('thresholds', (0.005, 0.6)))
        self.assertEqual({'ablation': 'full'}, axis_overrides('ablations', 'full'))
        with self.assertRaises(ConfigError):
            axis_overrides('bogus', 1)


    def test_ablation_sweep(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            rows = run_sweep(tiny_run_config(temp_dir, iterations=1), 'ablations', ['full'], load_settings('toy'))
            self.assertEqual(['none', 'full'], [row['ablations'] for row in rows])
            self.assertEqual(0.0, rows[0]['validation_memory_slots'])
            sweep_dir = Path(temp_dir) / 'sweep-ablations'
            for label in ['none', 'full']:
                self.assertTrue((sweep_dir / label / CHECKPOINT_FILE_NAME).exists())
            with open(sweep_dir / 'sweep_report.json') as report_fp:
                self.assertEqual({'axis': 'ablations', 'rows': rows}, json.load(report_fp))
            table_lines = (sweep_dir / 'sweep_report.txt').read_text().splitlines()
            self.assertEqual(3, len(table_lines))
            self.assertTrue(table_lines[0].startswith('ablations'))


    def test_threshold_sweep(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            rows = run_sweep(tiny_run_config(temp_dir, iterations=0), 'thresholds', [(0.0, 0.0), (10.0, 100.0)],
                             load_settings('toy'))
            self.assertEqual(['0_0', '10_100'], [row['thresholds'] for row in rows])
            self.assertEqual(3.0, rows[0]['validation_memory_slots'])  # every step stored
            self.assertEqual(1.0, rows[1]['validation_memory_slots'])  # only the first step
            with self.assertRaises(ConfigError):
                run_sweep(tiny_run_config(temp_dir), 'bogus', settings=load_settings('toy'))


    def test_table_lines(self):
        rows = [{'sequence_length': '5', 'final_validation_loss': 1.5, 'initial_validation_ate': None,
                 'final_validation_ate': 0.25, 'validation_memory_slots': 2.0}]
        lines = sweep_table_lines('sequence_length', rows)
        self.assertEqual(2, len(lines))
        self.assertEqual(['5', '1.500000', '-', '0.250000', '2.000000'], lines[1].split())


class CliTestCase(unittest.TestCase):
    """
    """


    def test_train_infer_eval(self):
        runner = CliRunner()
        with tempfile.TemporaryDirectory() as temp_dir:
            temp_dir = Path(temp_dir)
            config_path = temp_dir / 'tiny.yaml'
            with open(config_path, 'w') as config_fp:
                yaml.safe_dump(TINY_CONFIG, config_fp)

            result = runner.invoke(vo_cli_app, ['--settings', 'toy', 'train', '--config', str(config_path),
                                                '--output-dir', str(temp_dir / 'run'), '--iterations', '1'])
            self.assertEqual(0, result.exit_code, result.output)
            self.assertIn('checkpoint:', result.output)
            checkpoint_path = temp_dir / 'run' / CHECKPOINT_FILE_NAME
            self.assertTrue(checkpoint_path.exists())

            result = runner.invoke(vo_cli_app, ['--settings', 'toy', 'infer', '--checkpoint', str(checkpoint_path),
                                                '--input', 'synthetic', '--ablation', 'temporal_only'])
            self.assertEqual(0, result.exit_code, result.output)
            infer_dir = temp_dir / 'run' / 'infer'
            self.assertTrue((infer_dir / DIAGNOSTICS_FILE_NAME).exists())

            result = runner.invoke(vo_cli_app, ['--settings', 'toy', 'eval',
                                                '--est', str(infer_dir / 'synthetic-3-0005.tum.txt'),
                                                '--ref', str(infer_dir / 'synthetic-3-0005.gt.tum.txt'),
                                                '--ate', '--alignment', 'none'])
            self.assertEqual(0, result.exit_code, result.output)
            self.assertIn('ate_rmse (m, align=none)', result.output)
            self.assertTrue((infer_dir / 'synthetic-3-0005.tum.metrics.json').exists())


    def test_errors(self):
        runner = CliRunner()
        with tempfile.TemporaryDirectory() as temp_dir:
            bad_path = Path(temp_dir) / 'bad.txt'
            bad_path.write_text('not a trajectory\n')
            result = runner.invoke(vo_cli_app, ['--settings', 'toy', 'eval', '--est', str(bad_path), '--ref',
                                                str(TRAJECTORIES_DIR / 'kitti-straight.txt')])
            self.assertEqual(1, result.exit_code)
            self.assertIn('line 1', result.output)

        result = runner.invoke(vo_cli_app, ['--settings', 'no_such_profile', 'eval', '--est', 'x', '--ref', 'y'])
        self.assertNotEqual(0, result.exit_code)
        result = runner.invoke(vo_cli_app, ['--settings', 'toy', 'sweep', '--axis', 'bogus'])
        self.assertEqual(2, result.exit_code)  # click usage error
