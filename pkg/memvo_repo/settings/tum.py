# the TUM RGB-D profile: k=1 and motion thresholds of 0.01 rad and 0.01 m, suited to slow handheld motion

from .base import *


PROFILE_NAME = 'tum'

MANIFEST_PATH = os.path.join(MANIFESTS_DIR, 'tum-rgbd.json')

LOSS_K = 1.0

THETA_ROT = 0.01
THETA_TRANS = 0.01

FRAME_PERIOD = 1.0 / 30  # handheld capture at up to 30 fps

# short, randomly placed snippets with bounded overlap. consecutive TUM frames overlap heavily
SNIPPET_POLICY = 'random'
