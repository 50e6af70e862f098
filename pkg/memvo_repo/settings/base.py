"""
Default settings for memvo runs. The values here are the KITTI training protocol: ROT/TRANS memory thresholds of 0.005
rad and 0.6 m, k=100, Adam with betas (0.9, 0.99) and weight decay 4e-4, an initial learning rate of 1e-4 halved every
60,000 iterations, batches of 4, and 11-frame sequences.

"children" modules set or override a few values after doing: from .base import *
"""

import logging
import os


#
# directories
#

BASE_DIR = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

MANIFESTS_DIR = os.path.join(PROJECT_ROOT, 'manifests')

# the directory that relative run output_dirs are resolved against
OUTPUT_ROOT = os.environ.get('MEMVO_OUTPUT_ROOT', os.path.join(BASE_DIR, 'runs'))

PROFILE_NAME = 'kitti'

#
# ---- model ----
#

SEQUENCE_LENGTH = 11  # frames per training sequence. the network sees SEQUENCE_LENGTH - 1 frame pairs
FEATURE_SHAPE = (8, 8, 8)  # C, H, W of the features fed to the tracking ConvLSTM
HIDDEN_CHANNELS = 8
FUSION_CHANNELS = 8
ENCODER_LAYERS = []  # [[out_channels, stride], ...]. empty: features are ingested or synthesized directly
INPUT_CHANNELS = 6  # a stacked RGB image pair. used only when ENCODER_LAYERS is non-empty

THETA_ROT = 0.005  # radians
THETA_TRANS = 0.6  # meters
BUFFER_CAPACITY = None  # None: the buffer is as long as the sequence

ABLATION = 'full'

#
# ---- loss and optimizer ----
#

LOSS_K = 100.0

LEARNING_RATE = 1e-4
ADAM_BETAS = (0.9, 0.99)
ADAM_EPS = 1e-8
WEIGHT_DECAY = 4e-4
LR_HALVING_INTERVAL = 60_000

BATCH_SIZE = 4
NUM_ITERATIONS = 150_000
CHECKPOINT_INTERVAL = 10_000
SEED = 0

#
# ---- data ----
#

SYNTHETIC = {
    'seed': 7,
    'num_sequences': 200,
    'smoothness': 0.8,
    'noise_sigma': 0.05,
    'forward_speed': 1.0,
    'translation_std': 0.3,
    'rotation_std': 0.01,
    'rotation_gain': 100.0,
}

FRAME_PERIOD = 0.1  # seconds. KITTI odometry is recorded at 10 Hz

MANIFEST_PATH = None  # None: train on synthetic sequences

NUM_VALIDATION = 20  # held-out sequences, taken from the end of the dataset

SNIPPET_POLICY = 'random'
SNIPPET_STRIDE = 10
SNIPPET_MAX_OVERLAP = 0.5  # fraction of a snippet that may overlap the previously sampled one

#
# ---- evaluation ----
#

KITTI_SEGMENT_LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)  # meters
KITTI_SEGMENT_STEP = 10  # frames between segment start indices

RPE_DELTA = 1.0  # seconds

TUM_ASSOCIATION_WINDOW = 0.02  # seconds
MAX_UNMATCHED_FRACTION = 0.1

ATE_ALIGNMENT = 'sim3'  # monocular: scale is unobservable, so align with a similarity by default

#
# ---- sweeps ----
#

SWEEP_AXES = {
    'sequence_length': [5, 7, 9, 11],
    'thresholds': [(0.0, 0.0), (0.005, 0.6), (0.01, 0.01), (0.05, 2.0)],
    'ablations': ['none', 'no_attention', 'temporal_only', 'full'],
}

#
# ---- logging ----
#

LOG_LEVEL = os.environ.get('MEMVO_LOG_LEVEL', 'INFO').upper()

if not isinstance(logging.getLevelName(LOG_LEVEL), int):  # getLevelName() maps known names to their int level
    raise RuntimeError(f"base.py: MEMVO_LOG_LEVEL config var is not a logging level: {LOG_LEVEL!r}")

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '%(levelname)s %(asctime)s %(module)s %(process)d %(thread)d %(message)s'
        },
    },
    'handlers': {
        'console': {
            'level': 'NOTSET',
            'class': 'logging.StreamHandler',
            'formatter': 'verbose'
        }
    },
    'loggers': {
        '': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
        },
    }
}

#
# ---- environment overrides ----
#

if 'MEMVO_NUM_ITERATIONS' in os.environ:
    num_iterations_value = os.environ.get('MEMVO_NUM_ITERATIONS')
    try:
        NUM_ITERATIONS = int(num_iterations_value)
    except ValueError:
        raise RuntimeError(f"base.py: MEMVO_NUM_ITERATIONS config var could not be coerced to int: "
                           f"{num_iterations_value!r}")

if 'MEMVO_SEED' in os.environ:
    seed_value = os.environ.get('MEMVO_SEED')
    try:
        SEED = int(seed_value)
    except ValueError:
        raise RuntimeError(f"base.py: MEMVO_SEED config var could not be coerced to int: {seed_value!r}")
