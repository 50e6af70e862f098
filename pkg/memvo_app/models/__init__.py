from .memory_buffer import MemoryBuffer, MemorySlot
from .metric_report import MetricReport, SegmentBreakdown
from .pose import Pose, Trajectory
from .run_config import RunConfig, OptimizerConfig, LossWeights
from .sequence import SequenceSample, SyntheticSpec
from .vo_model import VoModel, VoModelConfig, ConvLstmState
