# desk-scale synthetic profile: small features and a short, faster schedule. runs on a CPU in minutes

from .base import *


PROFILE_NAME = 'toy'

MANIFEST_PATH = None

FEATURE_SHAPE = (8, 8, 8)
HIDDEN_CHANNELS = 8
FUSION_CHANNELS = 8

LEARNING_RATE = 1e-3
NUM_ITERATIONS = 2000
BATCH_SIZE = 4
CHECKPOINT_INTERVAL = 500
LR_HALVING_INTERVAL = 60_000

SYNTHETIC = {**SYNTHETIC, 'seed': 7, 'num_sequences': 200, 'noise_sigma': 0.05}

NUM_VALIDATION = 20
