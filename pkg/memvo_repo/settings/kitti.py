# the KITTI odometry profile. base.py already holds the KITTI protocol, so this only names the manifest

from .base import *


PROFILE_NAME = 'kitti'

MANIFEST_PATH = os.path.join(MANIFESTS_DIR, 'kitti-odometry.json')
