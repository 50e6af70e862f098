import json
import math
import os
import tempfile
import time
import unittest
from pathlib import Path

import numpy as np

from memvo_app.models.pose import Pose, Trajectory
from memvo_app.tests.test_evaluation import brute_force_segment_errors
from memvo_app.tests.test_geometry import random_trajectory
from memvo_repo.settings import load_settings
from utils.evaluation import kitti_segment_errors
from utils.geometry import compose
from utils.training import load_run_config, run_train, run_sweep, RESOLVED_CONFIG_FILE_NAME, \
    TRAIN_LOG_FILE_NAME, CHECKPOINT_FILE_NAME


ACCEPTANCE_ENABLED = bool(os.environ.get('MEMVO_ACCEPTANCE'))

TOY_RUNTIME_LIMIT = 10 * 60  # seconds


@unittest.skipUnless(ACCEPTANCE_ENABLED, "set MEMVO_ACCEPTANCE=1 to run the desk-scale acceptance runs")
class ToyTrainingAcceptanceTestCase(unittest.TestCase):
    """
    The full toy profile: 200 synthetic sequences of 11 frames, 2000 iterations. Slow.
    """


    @classmethod
    def setUpClass(cls):
        cls.temp_dir = tempfile.TemporaryDirectory()
        cls.settings = load_settings('toy')
        run_config = load_run_config(None, cls.settings, {'output_dir': str(Path(cls.temp_dir.name) / 'toy')})
        start_time = time.monotonic()
        cls.result = run_train(run_config)
        cls.runtime = time.monotonic() - start_time


    @classmethod
    def tearDownClass(cls):
        cls.temp_dir.cleanup()


    def test_loss_and_ate_improve(self):
        summary = self.result.summary
        self.assertEqual(2000, summary['iterations'])
        self.assertEqual(20, summary['num_validation'])
        self.assertLess(summary['final_validation_loss'], 0.5 * summary['initial_validation_loss'])
        self.assertLessEqual(summary['final_validation_ate'], 0.5 * summary['initial_validation_ate'])
        self.assertLess(self.runtime, TOY_RUNTIME_LIMIT)


    def test_rerun_from_snapshot_is_byte_identical(self):
        output_dir = self.result.output_dir
        file_names = [TRAIN_LOG_FILE_NAME, CHECKPOINT_FILE_NAME]
        file_name_to_bytes = {file_name: (output_dir / file_name).read_bytes() for file_name in file_names}
        run_train(load_run_config(output_dir / RESOLVED_CONFIG_FILE_NAME, self.settings))
        for file_name in file_names:
            self.assertEqual(file_name_to_bytes[file_name], (output_dir / file_name).read_bytes(), msg=file_name)


@unittest.skipUnless(ACCEPTANCE_ENABLED, "set MEMVO_ACCEPTANCE=1 to run the desk-scale acceptance runs")
class AblationOrderingAcceptanceTestCase(unittest.TestCase):
    """
    """


    def test_full_model_does_not_degrade_tracking(self):
        settings = load_settings('toy')
        ates = {'none': [], 'full': []}
        with tempfile.TemporaryDirectory() as temp_dir:
            for seed in [1, 2, 3]:
                run_config = load_run_config(None, settings, {'seed': seed,
                                                              'output_dir': str(Path(temp_dir) / f"seed-{seed}")})
                for row in run_sweep(run_config, 'ablations', ['full'], settings):
                    ates[row['ablations']].append(row['final_validation_ate'])
        self.assertEqual(3, len(ates['full']))
        self.assertEqual(3, len(ates['none']))
        self.assertLessEqual(np.mean(ates['full']), 1.1 * np.mean(ates['none']))


@unittest.skipUnless(ACCEPTANCE_ENABLED, "set MEMVO_ACCEPTANCE=1 to run the desk-scale acceptance runs")
class SequenceLengthSweepAcceptanceTestCase(unittest.TestCase):
    """
    """


    def test_sweep_emits_one_row_per_length(self):
        settings = load_settings('toy')
        with tempfile.TemporaryDirectory() as temp_dir:
            run_config = load_run_config(None, settings, {'iterations': 50, 'output_dir': temp_dir})
            rows = run_sweep(run_config, 'sequence_length', None, settings)
            self.assertEqual(['5', '7', '9', '11'], [row['sequence_length'] for row in rows])

            sweep_dir = Path(temp_dir) / 'sweep-sequence_length'
            with open(sweep_dir / 'sweep_report.json') as report_fp:
                self.assertEqual(4, len(json.load(report_fp)['rows']))
            table_lines = (sweep_dir / 'sweep_report.txt').read_text().splitlines()
            self.assertEqual(5, len(table_lines))  # header + 4 rows
            for row in rows:
                self.assertTrue(math.isfinite(row['final_validation_loss']))


class SegmentErrorOracleAcceptanceTestCase(unittest.TestCase):
    """
    """


    def test_matches_brute_force_on_long_trajectories(self):
        lengths = (100, 200, 300, 400, 500, 600, 700, 800)
        rng = np.random.default_rng(501)
        reference = random_trajectory(rng, 500)
        noise_poses = [Pose(rotation=rng.normal(0, 0.005, 3), translation=rng.normal(0, 0.05, 3)) for _ in range(500)]
        estimate = Trajectory([compose(pose, noise) for pose, noise in zip(reference.poses, noise_poses)])
        exp_errors = brute_force_segment_errors(estimate, reference, lengths, 10)
        t_rel, r_rel, _ = kitti_segment_errors(estimate, reference, lengths, 10)
        self.assertAlmostEqual(100 * np.mean([t_err for _, t_err, _ in exp_errors]), t_rel, delta=1e-9)
        self.assertAlmostEqual(100 * 180 / math.pi * np.mean([r_err for _, _, r_err in exp_errors]), r_rel,
                               delta=1e-9)
