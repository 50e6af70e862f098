import dataclasses
import logging
from collections import namedtuple
from dataclasses import dataclass, field
from typing import List, Optional

from utils.utilities import aligned_table_lines


logger = logging.getLogger(__name__)

# one row of the per-length breakdown: segment length (m), mean translational error (%), mean rotational error
# (deg/100m), and the number of segments averaged
SegmentBreakdown = namedtuple('SegmentBreakdown', ['length', 't_rel', 'r_rel', 'num_segments'])


#
# ---- MetricReport ----
#

@dataclass
class MetricReport:
    """
    Trajectory metrics for one estimate/reference pair. A metric is None when it was not requested or could not be
    computed (e.g., rpe_rmse without timestamps, or KITTI metrics on a trajectory shorter than the smallest segment).
    """
    t_rel: Optional[float] = None  # percent
    r_rel: Optional[float] = None  # degrees per 100 m
    ate_rmse: Optional[float] = None  # meters
    ate_alignment: Optional[str] = None  # 'none', 'se3', or 'sim3'
    rpe_rmse: Optional[float] = None  # meters per second
    breakdown: List[SegmentBreakdown] = field(default_factory=list)
    num_poses: int = 0


    def to_dict(self):
        report_dict = dataclasses.asdict(self)
        report_dict['breakdown'] = [row._asdict() for row in self.breakdown]
        return report_dict


    def as_table(self):
        """
        :return: an aligned plain-text rendering of me
        """
        rows = [('metric', 'value'),
                ('poses', str(self.num_poses)),
                ('t_rel (%)', _fmt(self.t_rel)),
                ('r_rel (deg/100m)', _fmt(self.r_rel)),
                (f"ate_rmse (m, align={self.ate_alignment})", _fmt(self.ate_rmse)),
                ('rpe_rmse (m/s)', _fmt(self.rpe_rmse))]
        lines = aligned_table_lines(rows)
        if self.breakdown:
            lines.append('')
            lines.extend(aligned_table_lines([('length (m)', 't_rel (%)', 'r_rel (deg/100m)', 'segments')] +
                                             [(f"{row.length:g}", _fmt(row.t_rel), _fmt(row.r_rel),
                                               str(row.num_segments)) for row in self.breakdown]))
        return '\n'.join(lines)


def _fmt(value):
    return '-' if value is None else f"{value:.6f}"

